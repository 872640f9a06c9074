//! `mk fetch-data`: put a CIFAR-10 binary corpus on disk, either by
//! downloading the real archive or by synthesizing a seeded stand-in.

use std::path::{Path, PathBuf};
use std::process::Command;

use mk_core::data::generate_synthetic_cifar10;

use crate::artifacts;
use crate::config::{CliError, CliResult};

const CIFAR_URL: &str = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz";
const FILES: [&str; 6] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
    "test_batch.bin",
];
const FULL_FILE_BYTES: u64 = 10_000 * 3073;

#[derive(clap::Args)]
pub struct FetchArgs {
    /// Destination directory (default: MK_DATA_DIR, else
    /// ./cifar-10-batches-bin).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Write a seeded synthetic corpus instead of downloading.
    #[arg(long)]
    synthetic: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Synthetic mode: records per training file.
    #[arg(long, default_value_t = 10_000)]
    per_file: usize,
    /// Synthetic mode: records in the test file.
    #[arg(long, default_value_t = 10_000)]
    test_records: usize,
    /// Download URL for the binary-version archive.
    #[arg(long, default_value = CIFAR_URL)]
    url: String,
}

fn corpus_complete(dir: &Path) -> bool {
    FILES.iter().all(|f| {
        std::fs::metadata(dir.join(f)).map(|m| m.len() == FULL_FILE_BYTES).unwrap_or(false)
    })
}

fn dest_dir(args: &FetchArgs) -> PathBuf {
    args.out
        .clone()
        .or_else(|| std::env::var_os("MK_DATA_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("cifar-10-batches-bin"))
}

pub fn cmd_fetch(args: &FetchArgs) -> CliResult<()> {
    if args.synthetic && (args.per_file < 1 || args.test_records < 1) {
        return Err(CliError::Config("per_file: synthetic corpus needs at least 1 record per file".into()));
    }
    let out = dest_dir(args);
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;

    let mode = if args.synthetic {
        let files = generate_synthetic_cifar10(&out, args.per_file, args.test_records, args.seed)?;
        println!("wrote {} synthetic batch files to {}", files.len(), out.display());
        "synthetic"
    } else if corpus_complete(&out) {
        println!("corpus already present in {}", out.display());
        "already-present"
    } else {
        download(&out, &args.url)?;
        println!("downloaded CIFAR-10 binary corpus to {}", out.display());
        "download"
    };

    // The batch files are a fixed binary format with no room for metadata,
    // so provenance rides in a sidecar.
    artifacts::write_json(
        &out.join("fetch.json"),
        &serde_json::json!({
            "version_tag": mk_core::VERSION_TAG,
            "mode": mode,
            "seed": args.seed,
            "per_file": args.per_file,
            "test_records": args.test_records,
            "url": if args.synthetic { None } else { Some(&args.url) },
        }),
    )?;
    println!("export MK_DATA_DIR={} to use it", out.display());
    Ok(())
}

fn download(out: &Path, url: &str) -> CliResult<()> {
    let tmp = out.join(".fetch-tmp");
    std::fs::create_dir_all(&tmp)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", tmp.display())))?;
    let archive = tmp.join("cifar-10-binary.tar.gz");

    let status = Command::new("curl")
        .args(["-fSL", "--retry", "3", "-o"])
        .arg(&archive)
        .arg(url)
        .status()
        .map_err(|e| CliError::Runtime(format!("cannot launch curl: {e}")))?;
    if !status.success() {
        return Err(CliError::Runtime(format!(
            "download failed (curl exited with {status}); pass --synthetic for an offline corpus"
        )));
    }

    let status = Command::new("tar")
        .arg("-xzf")
        .arg(&archive)
        .arg("-C")
        .arg(&tmp)
        .status()
        .map_err(|e| CliError::Runtime(format!("cannot launch tar: {e}")))?;
    if !status.success() {
        return Err(CliError::Runtime(format!("archive extraction failed (tar exited with {status})")));
    }

    // The archive unpacks into cifar-10-batches-bin/.
    let unpacked = tmp.join("cifar-10-batches-bin");
    for f in FILES {
        std::fs::rename(unpacked.join(f), out.join(f))
            .map_err(|e| CliError::Runtime(format!("archive is missing {f}: {e}")))?;
    }
    let _ = std::fs::remove_dir_all(&tmp);

    if !corpus_complete(out) {
        return Err(CliError::Runtime("downloaded corpus has unexpected file sizes".into()));
    }
    Ok(())
}
