//! Device-layer properties: address arithmetic under random schemes, the
//! write-once prefix discipline over random operation sequences, and the
//! first-virgin search against a linear-scan oracle with its probe bound.

mod common;

use cdfs::device::{
    AddressScheme, BlockDevice, BlockReadResult, DeviceGeometry, SchemeEntry, SimDevice,
};
use cdfs::format::{encode_eot, initial_eot, Timestamp};
use cdfs::Volume;
use common::*;
use proptest::collection::vec;
use proptest::prelude::*;

/// Random valid schemes: 2 to 5 fields whose widths sum to 64 and whose
/// moduli fit their widths.
fn arb_scheme() -> impl Strategy<Value = AddressScheme> {
    vec(4u16..=20, 1..=4)
        .prop_filter("leave at least 8 bits for the offset field", |bits| {
            bits.iter().map(|&b| u32::from(b)).sum::<u32>() <= 56
        })
        .prop_flat_map(|block_bits| {
            let moduli: Vec<BoxedStrategy<u32>> = block_bits
                .iter()
                .map(|&b| (2u32..=(1u32 << b.min(16))).boxed())
                .collect();
            (Just(block_bits), moduli, 2u32..=4096).prop_map(|(bits, moduli, block_size)| {
                let mut entries: Vec<SchemeEntry> = bits
                    .iter()
                    .zip(&moduli)
                    .map(|(&b, &m)| SchemeEntry { modulo: m, bits: b })
                    .collect();
                let offset_bits = 64 - entries.iter().map(|e| u32::from(e.bits)).sum::<u32>();
                let max_block = 1u64 << offset_bits.min(31);
                entries.push(SchemeEntry {
                    modulo: (u64::from(block_size).min(max_block)).max(2) as u32,
                    bits: offset_bits as u16,
                });
                AddressScheme::new(entries).expect("constructed valid")
            })
        })
}

proptest! {
    #[test]
    fn decode_inverts_encode_for_all_valid_field_tuples(
        scheme in arb_scheme(),
        raw_fields in vec(any::<u64>(), 5),
    ) {
        let fields: Vec<u64> = scheme
            .entries()
            .iter()
            .zip(raw_fields.iter().cycle())
            .map(|(e, r)| r % u64::from(e.modulo))
            .collect();
        let addr = scheme.encode_fields(&fields).unwrap();
        prop_assert_eq!(scheme.decode_fields(addr).unwrap(), fields);
    }

    #[test]
    fn ordinal_and_address_invert_each_other(
        scheme in arb_scheme(),
        seed in any::<u64>(),
    ) {
        let max = scheme.max_blocks().min(10_000);
        let ordinal = seed % max;
        let addr = scheme.address_of(ordinal, 0).unwrap();
        prop_assert_eq!(scheme.ordinal_of(addr).unwrap(), ordinal);
    }

    #[test]
    fn advance_matches_ordinal_arithmetic(
        scheme in arb_scheme(),
        seed in any::<u64>(),
        delta in -50i64..50,
    ) {
        let max = scheme.max_blocks().min(10_000);
        let ordinal = (seed % max) as i64;
        let addr = scheme.address_of(ordinal as u64, 0).unwrap();
        let target = ordinal + delta;
        if target >= 0 && (target as u64) < scheme.max_blocks() {
            let stepped = scheme.advance(addr, delta).unwrap();
            prop_assert_eq!(scheme.ordinal_of(stepped).unwrap(), target as u64);
        } else {
            prop_assert!(scheme.advance(addr, delta).is_err());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Random interleavings of writes, destroys and reads keep the
    /// write-once discipline: written content is immutable until
    /// destroyed, and written-or-destroyed blocks form a prefix.
    #[test]
    fn immutability_and_prefix_over_random_op_sequences(ops in vec((0u8..3, any::<u64>()), 1..60)) {
        let dir = tempfile::tempdir().unwrap();
        let geometry = DeviceGeometry::new(24, AddressScheme::audio()).unwrap();
        let mut dev =
            SimDevice::open_or_create(&dir.path().join("ops.cdsim"), Some(geometry)).unwrap();
        let scheme = dev.geometry().scheme.clone();
        let mut shadow: Vec<Option<Option<Vec<u8>>>> = vec![None; 24]; // None=virgin, Some(Some)=written, Some(None)=destroyed
        let mut next = 0u64;
        for (op, arg) in ops {
            match op {
                0 => {
                    if next < 24 {
                        let content = patterned_bytes((arg % 2048) as usize, arg);
                        dev.write_next(scheme.address_of(next, 0).unwrap(), &content).unwrap();
                        let mut full = content.clone();
                        full.resize(2048, 0);
                        shadow[next as usize] = Some(Some(full));
                        next += 1;
                    }
                }
                1 => {
                    if next > 0 {
                        let target = arg % next;
                        let addr = scheme.address_of(target, 0).unwrap();
                        let was_written = matches!(shadow[target as usize], Some(Some(_)));
                        let result = dev.destroy_block(addr);
                        prop_assert_eq!(result.is_ok(), was_written);
                        if was_written {
                            shadow[target as usize] = Some(None);
                        }
                    }
                }
                _ => {
                    let target = arg % 24;
                    let got = dev.read_block(scheme.address_of(target, 0).unwrap()).unwrap();
                    match &shadow[target as usize] {
                        None => prop_assert_eq!(got, BlockReadResult::Virgin),
                        Some(None) => prop_assert_eq!(got, BlockReadResult::Unreadable),
                        Some(Some(content)) => prop_assert_eq!(got, BlockReadResult::Written(content.clone())),
                    }
                }
            }
            // Prefix property: non-virgin blocks are exactly [0, next).
            for (i, s) in shadow.iter().enumerate() {
                prop_assert_eq!(s.is_some(), (i as u64) < next);
            }
        }
    }

    /// The default binary search equals a linear scan and stays within its
    /// probe bound for every prefix length.
    #[test]
    fn find_first_virgin_matches_linear_scan_with_probe_bound(prefix in 0u64..=60) {
        let dir = tempfile::tempdir().unwrap();
        let geometry = DeviceGeometry::new(60, AddressScheme::audio()).unwrap();
        let mut dev =
            SimDevice::open_or_create(&dir.path().join("ffv.cdsim"), Some(geometry)).unwrap();
        let scheme = dev.geometry().scheme.clone();
        for i in 0..prefix {
            dev.write_next(scheme.address_of(i, 0).unwrap(), b"x").unwrap();
        }
        dev.reset_probes();
        let found = dev.find_first_virgin(0, 60).unwrap();
        let probes = dev.probe_count();
        let expect = if prefix >= 60 { None } else { Some(prefix) };
        prop_assert_eq!(found, expect);
        let bound = (60f64).log2().ceil() as u64 + 2;
        prop_assert!(probes <= bound, "{} probes for prefix {}", probes, prefix);
    }
}

#[test]
fn quarter_million_block_device_locates_first_virgin_within_twenty_probes() {
    // Built by direct image construction: a real first EOT, a sparse
    // written prefix of zero blocks, and a crafted terminal EOT.
    let fx = Fixture::new();
    let scheme = AddressScheme::audio();
    let capacity = 262_144u64;
    let geometry = DeviceGeometry::new(capacity, scheme.clone()).unwrap();
    let path = fx.image_path("quarter");
    drop(SimDevice::open_or_create(&path, Some(geometry)).unwrap());

    let addr0 = scheme.address_of(0, 0).unwrap();
    let eot0 = initial_eot(addr0, scheme.clone(), "big".into(), Timestamp(5));
    poke_image_block(&path, 0, &encode_eot(&eot0).unwrap());
    let prefix = 200_000u64;
    mark_image_prefix_written(&path, prefix);
    let last_addr = scheme.address_of(prefix - 1, 0).unwrap();
    let mut last = initial_eot(last_addr, scheme.clone(), "big".into(), Timestamp(6));
    last.trans_number = 1;
    last.previous_eot_location = addr0;
    poke_image_block(&path, prefix - 1, &encode_eot(&last).unwrap());

    let dev = SimDevice::open_or_create(&path, None).unwrap();
    dev.reset_probes();
    assert_eq!(dev.find_first_virgin(0, capacity).unwrap(), Some(prefix));
    assert!(
        dev.probe_count() <= 20,
        "{} probes on a quarter-million-block device",
        dev.probe_count()
    );

    // A full mount observes the twenty-seek bound too.
    let volume = Volume::mount(Box::new(dev)).unwrap();
    assert_eq!(volume.last_eot().trans_number, 1);
}
