//! Volume lifecycle: initialization, mount search, recovery, commit
//! layout, fsck, and the write-once audit trail.

mod common;

use cdfs::device::{AddressScheme, SimDevice};
use cdfs::format::{
    decode_dir_list, decode_eot, decode_fileheader, encode_eot, initial_eot, FileType, Timestamp,
    DIR_LIST_MAGIC, EOT_MAGIC, FILEHEADER_MAGIC,
};
use cdfs::{Error, SteppingClock, Volume};
use common::*;

fn put_bytes(v: &mut Volume, dir: u32, file_name: &str, bytes: &[u8]) {
    let mut w = v.open_write(dir, &name(file_name)).unwrap();
    w.write(bytes).unwrap();
    w.close(v).unwrap();
}

#[test]
fn init_writes_exactly_one_block_with_self_referential_eot() {
    let fx = Fixture::new();
    let v = fx.volume("init", 16);
    assert_eq!(v.next_write_ordinal(), 1);
    assert_eq!(v.device().state_counts(), (1, 15, 0));
    let eot = v.last_eot();
    assert_eq!(eot.trans_number, 0);
    assert_eq!(eot.next_free_file_number, 2);
    assert!(eot.current_dir_list.is_null());
    assert!(eot.previous_eot_location.is_null());
    assert!(eot.next_eot_location.is_null());
    assert_eq!(
        eot.eot_location,
        v.scheme().address_of(0, 0).unwrap()
    );
    // Decode the raw block independently.
    let raw = read_image_block(&fx.image_path("init"), 0);
    let decoded = decode_eot(&raw, v.scheme().address_of(0, 0).unwrap()).unwrap();
    assert_eq!(decoded.owners_name, "tester");
}

#[test]
fn init_on_non_virgin_device_fails() {
    let fx = Fixture::new();
    {
        let _v = fx.volume("nonvirgin", 16);
    }
    let dev = SimDevice::open_or_create(&fx.image_path("nonvirgin"), None).unwrap();
    assert!(matches!(
        Volume::init_volume(Box::new(dev), "x", site()),
        Err(Error::DeviceNotVirgin)
    ));
}

#[test]
fn mount_of_fresh_volume_lands_on_block_zero_with_empty_root() {
    let fx = Fixture::new();
    drop(fx.volume("fresh", 16));
    let mut v = fx.mount("fresh").unwrap();
    assert_eq!(v.last_eot().trans_number, 0);
    assert_eq!(v.next_write_ordinal(), 1);
    assert_eq!(v.list_entries(1, None).unwrap().len(), 0);
}

#[test]
fn first_transaction_reproduces_the_documented_block_layout() {
    let fx = Fixture::new();
    let mut v = fx.volume("fig41", 16);
    // A file spanning two blocks and a one-block file, one transaction.
    put_bytes(&mut v, 1, "life.c", &patterned_bytes(3000, 41));
    put_bytes(&mut v, 1, "wheel.c", &patterned_bytes(500, 42));
    v.commit().unwrap();
    assert_eq!(v.next_write_ordinal(), 7);

    let path = fx.image_path("fig41");
    let scheme = v.scheme().clone();
    let at = |ord: u64| scheme.address_of(ord, 0).unwrap();
    // Roles: EOT, life.c header+content spilling into block 2, wheel.c,
    // root directory, directory list, EOT.
    assert_eq!(&read_image_block(&path, 0)[..8], &EOT_MAGIC);
    let h1 = decode_fileheader(&read_image_block(&path, 1), at(1)).unwrap();
    assert_eq!(h1.file_type, FileType::File);
    assert_ne!(&read_image_block(&path, 2)[..8], &FILEHEADER_MAGIC);
    let h3 = decode_fileheader(&read_image_block(&path, 3), at(3)).unwrap();
    assert_eq!(h3.file_type, FileType::File);
    let h4 = decode_fileheader(&read_image_block(&path, 4), at(4)).unwrap();
    assert_eq!(h4.file_type, FileType::Directory);
    assert_eq!(&read_image_block(&path, 5)[..8], &DIR_LIST_MAGIC);
    let eot = decode_eot(&read_image_block(&path, 6), at(6)).unwrap();
    assert_eq!(eot.trans_number, 1);
    assert_eq!(eot.files_written_on_trans, 2);
    assert_eq!(eot.dirs_written_on_trans, 1);
    assert_eq!(eot.previous_eot_location, at(0));

    // The directory list has one element, the root, sorted first.
    let list = decode_dir_list(&read_image_block(&path, 5), at(5)).unwrap();
    assert_eq!(list.elements.len(), 1);
    assert_eq!(list.elements[0].dir_number, 1);
    assert_eq!(list.elements[0].header_location, at(4));
    assert_eq!(list.elements[0].contained_bytes, 3500);

    // A fresh mount lands on the block-6 EOT within the seek bound.
    drop(v);
    let dev = SimDevice::open_or_create(&path, None).unwrap();
    let mounted = Volume::mount(Box::new(dev)).unwrap();
    assert_eq!(mounted.last_eot_address(), at(6));
    assert!(mounted.device().probe_count() <= 20);
}

#[test]
fn second_transaction_leaves_first_blocks_untouched() {
    let fx = Fixture::new();
    let path = fx.image_path("fig42");
    let mut v = fx.volume("fig42", 32);
    put_bytes(&mut v, 1, "life.c", &patterned_bytes(3000, 41));
    put_bytes(&mut v, 1, "wheel.c", &patterned_bytes(500, 42));
    v.commit().unwrap();
    let before: Vec<Vec<u8>> = (0..7).map(|b| read_image_block(&path, b)).collect();

    put_bytes(&mut v, 1, "life.c", &patterned_bytes(2500, 43));
    v.commit().unwrap();
    let after: Vec<Vec<u8>> = (0..7).map(|b| read_image_block(&path, b)).collect();
    assert_eq!(before, after);

    let eot = v.last_eot();
    assert_eq!(eot.trans_number, 2);
    assert_eq!(
        eot.previous_eot_location,
        v.scheme().address_of(6, 0).unwrap()
    );
    // The new version chains to the old.
    let mut v = v;
    let info = v.file_info(1, &name("life.c"), 0, true).unwrap();
    let header = info.header().unwrap();
    assert_eq!(header.file_info.as_ref().unwrap().file_version_number, 2);
    assert!(!header
        .backup_info
        .as_ref()
        .unwrap()
        .previous_version_location
        .is_null());
}

#[test]
fn commit_without_open_transaction_fails() {
    let fx = Fixture::new();
    let mut v = fx.volume("notrans", 16);
    assert!(matches!(v.commit(), Err(Error::NoOpenTransaction)));
}

#[test]
fn mount_equals_linear_scan_over_randomized_prefixes() {
    // Fabricate prefixes directly: block 0 holds a real first EOT, the
    // prefix is filler, and the terminal block is a crafted valid EOT.
    let fx = Fixture::new();
    let capacity = 256u64;
    let scheme = AddressScheme::audio();
    let mut seed = 0xC0FFEE_u64;
    for trial in 0..25 {
        let nameish = format!("prefix{trial}");
        drop(fx.volume(&nameish, capacity));
        let path = fx.image_path(&nameish);
        seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let prefix = 1 + (seed >> 33) % (capacity - 1); // written blocks
        let last = prefix - 1;
        for b in 1..last {
            poke_image_block(&path, b, b"filler, not a valid record");
        }
        if last >= 1 {
            let addr = scheme.address_of(last, 0).unwrap();
            let eot = initial_eot(addr, scheme.clone(), "crafted".into(), Timestamp(7));
            let mut crafted = eot;
            crafted.trans_number = 1;
            crafted.previous_eot_location = scheme.address_of(0, 0).unwrap();
            poke_image_block(&path, last, &encode_eot(&crafted).unwrap());
        }
        let v = fx.mount(&nameish).unwrap();
        // Linear scan oracle over the image state table.
        let mut oracle_first_virgin = capacity;
        for b in 0..capacity {
            if image_block_state(&path, b) == 0 {
                oracle_first_virgin = b;
                break;
            }
        }
        assert_eq!(v.next_write_ordinal(), oracle_first_virgin);
        assert_eq!(
            v.last_eot_address(),
            scheme.address_of(oracle_first_virgin - 1, 0).unwrap(),
            "prefix {prefix}"
        );
    }
}

#[test]
fn mount_probe_count_within_seek_bound() {
    let fx = Fixture::new();
    let mut v = fx.volume("probes", 4096);
    for i in 0..40 {
        put_bytes(&mut v, 1, &format!("f{i:02}"), &patterned_bytes(900, i));
    }
    v.commit().unwrap();
    drop(v);

    let dev = SimDevice::open_or_create(&fx.image_path("probes"), None).unwrap();
    let v = Volume::mount(Box::new(dev)).unwrap();
    let probes = v.device().probe_count();
    let bound = (4096u64 as f64).log2().ceil() as u64 + 2;
    assert!(probes <= bound, "mount used {probes} probes, bound {bound}");
}

#[test]
fn recovery_after_truncated_commit_restores_previous_transaction() {
    let fx = Fixture::new();
    let path = fx.image_path("trunc");
    let mut v = fx.volume("trunc", 64);
    put_bytes(&mut v, 1, "a.txt", &patterned_bytes(1000, 1));
    v.commit().unwrap();
    let committed_tail = v.next_write_ordinal();
    put_bytes(&mut v, 1, "b.txt", &patterned_bytes(5000, 2));
    v.commit().unwrap();
    let full_tail = v.next_write_ordinal();
    drop(v);

    // Cut the image after every step of the second transaction.
    for prefix in committed_tail..full_tail {
        let cut = fx.image_path(&format!("trunc-cut{prefix}"));
        truncate_image_to_prefix(&path, &cut, prefix);
        let dev = SimDevice::open_or_create(&cut, None).unwrap();
        let mut mounted = Volume::mount(Box::new(dev)).unwrap();
        assert_eq!(mounted.last_eot().trans_number, 1, "prefix {prefix}");
        let names: Vec<String> = mounted
            .list_entries(1, None)
            .unwrap()
            .iter()
            .map(|e| e.file_name.to_string_lossy())
            .collect();
        assert_eq!(names, vec!["a.txt"], "prefix {prefix}");
        // The write position stays at the first virgin block.
        assert_eq!(mounted.next_write_ordinal(), prefix);
    }
}

#[test]
fn corrupted_final_eot_recovers_to_previous_eot() {
    let fx = Fixture::new();
    let path = fx.image_path("badsum");
    let mut v = fx.volume("badsum", 64);
    put_bytes(&mut v, 1, "a.txt", &patterned_bytes(1000, 1));
    v.commit().unwrap();
    let first_eot_block = v.next_write_ordinal() - 1;
    put_bytes(&mut v, 1, "b.txt", &patterned_bytes(1000, 2));
    v.commit().unwrap();
    let last = v.next_write_ordinal() - 1;
    drop(v);

    // Flip a content bit inside the final EOT: magic intact, checksum bad.
    corrupt_image_block(&path, last, 100, 0);
    let dev = SimDevice::open_or_create(&path, None).unwrap();
    let mut mounted = Volume::mount(Box::new(dev)).unwrap();
    assert_eq!(mounted.last_eot().trans_number, 1);
    assert_eq!(
        mounted.last_eot_address(),
        mounted.scheme().address_of(first_eot_block, 0).unwrap()
    );
    // The dead tail above the recovered EOT is never reused; after another
    // commit those blocks show up as orphans.
    put_bytes(&mut mounted, 1, "c.txt", b"after recovery");
    mounted.commit().unwrap();
    let report = mounted.fsck().unwrap();
    assert!(
        report.orphaned_blocks.contains(&(first_eot_block + 1)),
        "orphans: {:?}",
        report.orphaned_blocks
    );
    assert_eq!(
        mounted.read_version_content(1, &name("a.txt"), 0).unwrap(),
        patterned_bytes(1000, 1)
    );
}

#[test]
fn invalid_block_zero_is_unrecoverable() {
    let fx = Fixture::new();
    let path = fx.image_path("badzero");
    drop(fx.volume("badzero", 16));
    corrupt_image_block(&path, 0, 3, 1);
    let dev = SimDevice::open_or_create(&path, None).unwrap();
    assert!(Volume::mount(Box::new(dev)).is_err());
}

#[test]
fn premastered_pointer_skips_the_binary_search() {
    let fx = Fixture::new();
    let path = fx.image_path("master");
    let mut v = fx.volume("master", 4096);
    put_bytes(&mut v, 1, "book.txt", &patterned_bytes(6000, 9));
    v.commit().unwrap();
    let last_eot_ordinal = v.next_write_ordinal() - 1;
    let scheme = v.scheme().clone();
    drop(v);

    // Master the image: rewrite block 0 so its EOT points at the closing
    // EOT of the first transaction.
    let raw0 = read_image_block(&path, 0);
    let addr0 = scheme.address_of(0, 0).unwrap();
    let mut eot0 = decode_eot(&raw0, addr0).unwrap();
    eot0.next_eot_location = scheme.address_of(last_eot_ordinal, 0).unwrap();
    poke_image_block(&path, 0, &encode_eot(&eot0).unwrap());

    let dev = SimDevice::open_or_create(&path, None).unwrap();
    let mounted = Volume::mount(Box::new(dev)).unwrap();
    // First EOT, the pointed EOT, and the virgin check: no search probes.
    assert_eq!(mounted.device().probe_count(), 3);
    assert_eq!(mounted.last_eot().trans_number, 1);

    // Annotating after mastering still mounts, searching only the tail.
    let mut mounted = mounted;
    put_bytes(&mut mounted, 1, "notes.txt", b"marginalia");
    mounted.commit().unwrap();
    drop(mounted);
    let dev = SimDevice::open_or_create(&path, None).unwrap();
    let remounted = Volume::mount(Box::new(dev)).unwrap();
    assert_eq!(remounted.last_eot().trans_number, 2);
}

#[test]
fn audit_trail_snapshots_are_prefixes_of_later_snapshots() {
    let fx = Fixture::new();
    let path = fx.image_path("audit");
    let mut v = fx.volume("audit", 64);
    let mut snapshots: Vec<(u64, Vec<u8>)> = Vec::new();

    let take = |upto: u64| -> Vec<u8> {
        (0..upto)
            .flat_map(|b| read_image_block(&path, b))
            .collect()
    };
    put_bytes(&mut v, 1, "one", &patterned_bytes(100, 1));
    v.commit().unwrap();
    snapshots.push((v.next_write_ordinal(), take(v.next_write_ordinal())));
    v.mkdir(1, &name("sub")).unwrap();
    put_bytes(&mut v, 1, "two", &patterned_bytes(4000, 2));
    v.commit().unwrap();
    snapshots.push((v.next_write_ordinal(), take(v.next_write_ordinal())));
    put_bytes(&mut v, 1, "one", &patterned_bytes(150, 3));
    v.commit().unwrap();
    snapshots.push((v.next_write_ordinal(), take(v.next_write_ordinal())));

    for pair in snapshots.windows(2) {
        let (_, earlier) = &pair[0];
        let (_, later) = &pair[1];
        assert!(later.starts_with(earlier));
    }
}

#[test]
fn eot_chain_walks_back_to_block_zero_with_descending_numbers() {
    let fx = Fixture::new();
    let mut v = fx.volume("chain", 64);
    for i in 0..3 {
        put_bytes(&mut v, 1, &format!("f{i}"), &patterned_bytes(10, i));
        v.commit().unwrap();
    }
    let scheme = v.scheme().clone();
    let path = fx.image_path("chain");
    let mut at = v.last_eot_address();
    let mut expected = 3i64;
    loop {
        let ordinal = scheme.ordinal_of(at).unwrap();
        let eot = decode_eot(&read_image_block(&path, ordinal), at).unwrap();
        assert_eq!(eot.trans_number as i64, expected);
        if eot.previous_eot_location.is_null() {
            assert_eq!(eot.trans_number, 0);
            assert_eq!(ordinal, 0);
            break;
        }
        at = eot.previous_eot_location;
        expected -= 1;
    }
}

#[test]
fn mount_after_commit_reconstructs_identical_state() {
    let fx = Fixture::new();
    let mut v = fx.volume("idem", 64);
    v.mkdir(1, &name("src")).unwrap();
    let sub = v.mkdir(1, &name("doc")).unwrap();
    put_bytes(&mut v, sub, "readme", &patterned_bytes(700, 5));
    v.commit().unwrap();
    let next_write = v.next_write_ordinal();
    let entries_before: Vec<_> = v
        .list_entries(1, None)
        .unwrap()
        .iter()
        .map(|e| (e.file_name.to_string_lossy(), e.file_number, e.file_type))
        .collect();
    drop(v);

    let mut m = fx.mount("idem").unwrap();
    assert_eq!(m.next_write_ordinal(), next_write);
    let entries_after: Vec<_> = m
        .list_entries(1, None)
        .unwrap()
        .iter()
        .map(|e| (e.file_name.to_string_lossy(), e.file_number, e.file_type))
        .collect();
    assert_eq!(entries_before, entries_after);
    assert_eq!(
        m.read_version_content(sub, &name("readme"), 0).unwrap(),
        patterned_bytes(700, 5)
    );
}

#[test]
fn fsck_on_healthy_two_transaction_volume_reports_clean_chain_of_three() {
    let fx = Fixture::new();
    let mut v = fx.volume("fsck-ok", 64);
    put_bytes(&mut v, 1, "a", &patterned_bytes(100, 1));
    v.commit().unwrap();
    put_bytes(&mut v, 1, "b", &patterned_bytes(100, 2));
    v.commit().unwrap();
    let report = v.fsck().unwrap();
    assert!(report.clean(), "{}", report.render(&v));
    assert_eq!(report.chain_length, 3);
    assert!(report.chain_consistent);
    assert_eq!(report.files, 2);
    assert_eq!(report.dirs, 1);
}

#[test]
fn fsck_reports_destroyed_content_and_orphans() {
    let fx = Fixture::new();
    let mut v = fx.volume("fsck-bad", 64);
    put_bytes(&mut v, 1, "doomed", &patterned_bytes(3000, 1));
    put_bytes(&mut v, 1, "kept", &patterned_bytes(100, 2));
    v.commit().unwrap();
    v.destroy(1, Some(&name("doomed")), 0).unwrap();
    v.commit().unwrap();
    let report = v.fsck().unwrap();
    assert!(!report.destroyed_blocks.is_empty());
    assert!(report.chain_consistent);
    // The volume still mounts cleanly.
    drop(v);
    let mut m = fx.mount("fsck-bad").unwrap();
    let names: Vec<String> = m
        .list_entries(1, None)
        .unwrap()
        .iter()
        .map(|e| e.file_name.to_string_lossy())
        .collect();
    assert_eq!(names, vec!["kept"]);
}

#[test]
fn crash_prefixes_of_a_small_scenario_always_mount_to_last_complete_transaction() {
    let fx = Fixture::new();
    let path = fx.image_path("crashall");
    let mut v = fx.volume("crashall", 64);
    let mut boundaries: Vec<(u64, u32)> = vec![(1, 0)];
    put_bytes(&mut v, 1, "x", &patterned_bytes(2500, 1));
    v.commit().unwrap();
    boundaries.push((v.next_write_ordinal(), 1));
    v.mkdir(1, &name("d")).unwrap();
    v.commit().unwrap();
    boundaries.push((v.next_write_ordinal(), 2));
    let total = v.next_write_ordinal();
    drop(v);

    for prefix in 1..=total {
        let cut = fx.image_path(&format!("crashall-{prefix}"));
        truncate_image_to_prefix(&path, &cut, prefix);
        let dev = SimDevice::open_or_create(&cut, None).unwrap();
        let mounted = Volume::mount(Box::new(dev)).unwrap();
        let expect = boundaries
            .iter()
            .rev()
            .find(|(tail, _)| *tail <= prefix)
            .map(|(_, trans)| *trans)
            .unwrap();
        assert_eq!(mounted.last_eot().trans_number, expect, "prefix {prefix}");
    }
}

#[test]
fn media_full_commit_fails_but_volume_stays_consistent() {
    let fx = Fixture::new();
    let mut v = fx.volume("full", 4);
    // Header plus content fits, but directory, list and EOT cannot.
    put_bytes(&mut v, 1, "a", &patterned_bytes(100, 1));
    match v.commit() {
        Err(Error::MediaFull { .. }) => {}
        other => panic!("expected media full, got {other:?}"),
    }
    drop(v);
    let mounted = fx.mount("full").unwrap();
    assert_eq!(mounted.last_eot().trans_number, 0);
}

#[test]
fn owner_too_long_for_one_block_eot_is_rejected() {
    let fx = Fixture::new();
    let dev = fx.device("bigowner", 16);
    let owner = "o".repeat(2048);
    assert!(matches!(
        Volume::init_volume_with_clock(
            Box::new(dev),
            &owner,
            site(),
            Box::new(SteppingClock::new(1, 1)),
        ),
        Err(Error::OwnerTooLong)
    ));
}
