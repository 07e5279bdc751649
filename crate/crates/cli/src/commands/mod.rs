pub mod analyze;
pub mod infer;
pub mod preview;
pub mod quantify;
pub mod score;
pub mod synth;
pub mod train;

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use histoseg::data::{Colormap, IMAGES_DIR};
use histoseg::metrics::{pretty_table, write_score_csv, ScoreRow};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::CliError;

/// Independent random streams derived from the master seed.
pub(crate) mod streams {
    pub const PATCHES: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const KMEANS: u64 = 3;
}

pub(crate) fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `WIDTHxHEIGHT`, e.g. `2064x1536`. Returns `(width, height)`.
pub fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let side = |v: &str| {
        v.trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| format!("bad side {v:?} in {s:?}"))
    };
    Ok((side(w)?, side(h)?))
}

/// Three comma-separated class fractions, e.g. `.44,.32,.24`.
pub fn parse_fractions(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected 3 fractions, got {}", v.len()))
}

/// A dataset directory is either `dir` itself (has `images/`) or its
/// `split` subdirectory.
pub(crate) fn resolve_dataset(dir: &Path, split: &str) -> Result<PathBuf, CliError> {
    if dir.join(IMAGES_DIR).is_dir() {
        return Ok(dir.to_path_buf());
    }
    let sub = dir.join(split);
    if sub.join(IMAGES_DIR).is_dir() {
        return Ok(sub);
    }
    Err(CliError::data(format!(
        "{}: neither {IMAGES_DIR}/ nor {split}/{IMAGES_DIR}/ found",
        dir.display()
    )))
}

pub(crate) fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub(crate) fn class_names(colormap: &Colormap) -> Vec<&str> {
    colormap.names()
}

/// Writes summary rows to stdout as CSV (or as a text table) and appends
/// them to `append_to`, adding the header when the file is new or empty.
pub(crate) fn emit_scores(
    out: &mut dyn Write,
    rows: &[ScoreRow<'_>],
    names: &[&str],
    pretty: bool,
    append_to: Option<&Path>,
) -> Result<(), CliError> {
    if pretty {
        out.write_all(pretty_table(rows, names).as_bytes())
            .map_err(|e| CliError::data(e.to_string()))?;
    } else {
        write_score_csv(&mut *out, rows, names)?;
    }
    if let Some(path) = append_to {
        let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let mut buf = Vec::new();
        write_score_csv(&mut buf, rows, names)?;
        let body = if fresh {
            &buf[..]
        } else {
            let nl = buf
                .iter()
                .position(|&b| b == b'\n')
                .map_or(buf.len(), |i| i + 1);
            &buf[nl..]
        };
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| CliError::io(path, e))?;
        f.write_all(body).map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

pub(crate) fn say(out: &mut dyn Write, text: impl AsRef<str>) -> Result<(), CliError> {
    writeln!(out, "{}", text.as_ref()).map_err(|e| CliError::data(format!("stdout: {e}")))
}

pub(crate) fn fmt_fractions(f: &[f64]) -> String {
    f.iter()
        .map(|v| format!("{v:.4}"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_and_fractions() {
        assert_eq!(parse_dims("2064x1536"), Ok((2064, 1536)));
        assert!(parse_dims("2064").is_err());
        assert!(parse_dims("0x5").is_err());
        assert_eq!(parse_fractions(".44,.32,.24"), Ok([0.44, 0.32, 0.24]));
        assert!(parse_fractions(".5,.5").is_err());
    }
}
