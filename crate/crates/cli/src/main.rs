//! Command-line front end for CDFS simulator images.
//!
//! One invocation mounts the image, runs one command (or a whole script),
//! and commits a single transaction on success. On any error the
//! transaction is abandoned and the image keeps only whole committed
//! transactions. Exit codes: 0 success, 1 operation error, 2 usage error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cdfs",
    about = "Create, update, inspect, recover and compact CDFS write-once volumes",
    version
)]
struct Cli {
    /// Simulator image holding the volume.
    image: PathBuf,
    #[command(subcommand)]
    command: Command,
}

/// One line of a script: a command without the image argument.
#[derive(Parser)]
#[command(name = "cdfs", no_binary_name = true)]
struct ScriptLine {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a fresh volume on a new image.
    Init {
        #[arg(long, default_value_t = 315_000)]
        capacity_blocks: u64,
        #[arg(long, default_value_t = 2048)]
        block_size: u32,
        /// Address scheme as modulo:bits pairs, e.g. 70:16,60:16,75:16,2048:16.
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long, default_value = "")]
        owner: String,
        #[arg(long, default_value = "")]
        site: String,
    },
    /// List a directory.
    Ls {
        path: String,
        #[arg(long)]
        long: bool,
    },
    /// Print the whole hierarchy.
    Tree,
    /// Copy a native file onto the volume.
    Put {
        native: PathBuf,
        cdpath: String,
        /// Start content on a block boundary.
        #[arg(long)]
        align: bool,
        /// Carry native modify time and ownership.
        #[arg(long)]
        preserve: bool,
    },
    /// Copy a file out to the native file system.
    Get {
        cdpath: String,
        native: PathBuf,
        #[arg(long, default_value_t = 0)]
        version: u32,
        #[arg(long)]
        preserve: bool,
    },
    /// Write a file's content to standard output.
    Cat {
        cdpath: String,
        #[arg(long, default_value_t = 0)]
        version: u32,
    },
    /// Create a directory.
    Mkdir { path: String },
    /// Detach a file or directory.
    Rm { path: String },
    /// Rename within a directory.
    Mv { old: String, new: String },
    /// Reattach a previously deleted entry.
    Undelete {
        dirpath: String,
        name: String,
        #[arg(long, default_value_t = 0)]
        version: u32,
        /// Assign a fresh file number instead of reusing the original.
        #[arg(long)]
        new_number: bool,
    },
    /// Create a soft link at LINKPATH pointing to TARGET.
    Ln {
        target: String,
        linkpath: String,
        #[arg(long, default_value_t = 0)]
        version: u32,
    },
    /// Attach an additional name to a file in the same directory.
    Addname { primarypath: String, name: String },
    /// List every version of a file.
    History { cdpath: String },
    /// Overwrite a version's blocks (all versions with --version 0).
    Destroy {
        cdpath: String,
        #[arg(long, default_value_t = 0)]
        version: u32,
    },
    /// Walk and validate every reachable structure.
    Fsck {
        #[arg(long)]
        verbose: bool,
    },
    /// Copy the live tree to a blank image.
    Compact { dst_image: PathBuf },
    /// Decode and print the record at an address, or `last-eot`.
    Dump { address: String },
    /// Written, virgin and destroyed block counts.
    Df,
    /// Run many commands from a file as a single transaction.
    Script { file: PathBuf },
}

impl Command {
    fn mutates(&self) -> bool {
        matches!(
            self,
            Command::Put { .. }
                | Command::Mkdir { .. }
                | Command::Rm { .. }
                | Command::Mv { .. }
                | Command::Undelete { .. }
                | Command::Ln { .. }
                | Command::Addname { .. }
                | Command::Destroy { .. }
        )
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli.image, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::CliError::Usage(message)) => {
            eprintln!("cdfs: {message}");
            ExitCode::from(2)
        }
        Err(commands::CliError::Op(err)) => {
            eprintln!("cdfs: {err}");
            ExitCode::FAILURE
        }
    }
}
