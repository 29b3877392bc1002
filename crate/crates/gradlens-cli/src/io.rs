//! On-disk formats: CSV emitters (17-significant-digit floats), the binary
//! embedding dump, and run manifests. All writes go through a temp file and
//! a rename, so partially written outputs never appear under the final name.

use anyhow::{bail, Context, Result};
use gradlens::embeddings::EmbeddingBatch;
use gradlens::lemma::MinRatioHistogram;
use gradlens::simulator::{SweepGrid, WeightCurves};
use gradlens::trainer::TrainTrace;
use gradlens::Matrix;
use std::fs;
use std::io::Write;
use std::path::Path;

/// 17 significant digits: exact round-trip for f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    {
        let mut f = fs::File::create(&tmp)
            .with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// `mu_pos,mu_neg,value,masked`, one row per cell, row-major over the
/// positive axis.
pub fn grid_csv(grid: &SweepGrid) -> String {
    let mut out = String::from("mu_pos,mu_neg,value,masked\n");
    for (i, &mp) in grid.mu_pos_axis.iter().enumerate() {
        for (j, &mn) in grid.mu_neg_axis.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                fmt_f64(mp),
                fmt_f64(mn),
                fmt_f64(grid.value(i, j)),
                grid.masked(i, j) as u8
            ));
        }
    }
    out
}

/// `mu_neg,tau,fraction` with the temperature series interleaved per point.
pub fn curves_csv(curves: &WeightCurves) -> String {
    let mut out = String::from("mu_neg,tau,fraction\n");
    for (j, &mn) in curves.mu_neg_axis.iter().enumerate() {
        for (t, &tau) in curves.taus.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{}\n",
                fmt_f64(mn),
                fmt_f64(tau),
                fmt_f64(curves.fractions[t][j])
            ));
        }
    }
    out
}

/// `step,mu_pos,mu_neg,sigma_pos,sigma_neg,mean_pos_cos,hardest_fraction`.
pub fn trace_csv(trace: &TrainTrace) -> String {
    let mut out =
        String::from("step,mu_pos,mu_neg,sigma_pos,sigma_neg,mean_pos_cos,hardest_fraction\n");
    for row in &trace.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.step,
            fmt_f64(row.stats.mu_pos_hat),
            fmt_f64(row.stats.mu_neg_hat),
            fmt_f64(row.stats.sigma_pos_hat),
            fmt_f64(row.stats.sigma_neg_hat),
            fmt_f64(row.stats.mean_pos_cos),
            fmt_f64(row.stats.hardest_weight_fraction)
        ));
    }
    out
}

/// `step,ratio_arc,ratio_met`: the dynamic-ratio trace recorded alongside
/// runs that train ArcCon or MET.
pub fn ratio_trace_csv(trace: &TrainTrace) -> String {
    let mut out = String::from("step,ratio_arc,ratio_met\n");
    for row in &trace.rows {
        out.push_str(&format!(
            "{},{},{}\n",
            row.step,
            fmt_f64(row.ratio_arc),
            fmt_f64(row.ratio_met)
        ));
    }
    out
}

/// `bin_low,bin_high,count` histogram rows.
pub fn hist_csv(h: &MinRatioHistogram) -> String {
    let mut out = String::from("bin_low,bin_high,count\n");
    for k in 0..h.counts.len() {
        out.push_str(&format!(
            "{},{},{}\n",
            fmt_f64(h.bin_low[k]),
            fmt_f64(h.bin_high[k]),
            h.counts[k]
        ));
    }
    out
}

const EMBS_MAGIC: &[u8; 5] = b"GLNS1";

/// Binary embedding dump: magic `GLNS1`, then N and D as u64 little-endian,
/// then N*D anchor f64s and N*D positive f64s, row-major little-endian.
pub fn embs_bytes(batch: &EmbeddingBatch) -> Vec<u8> {
    let n = batch.n();
    let d = batch.d();
    let mut out = Vec::with_capacity(5 + 16 + 16 * n * d);
    out.extend_from_slice(EMBS_MAGIC);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    for m in [batch.anchors(), batch.positives()] {
        for &x in &m.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn write_embs(path: &Path, batch: &EmbeddingBatch) -> Result<()> {
    atomic_write(path, &embs_bytes(batch))
}

pub fn read_embs(path: &Path) -> Result<EmbeddingBatch> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.len() < 21 || &bytes[..5] != EMBS_MAGIC {
        bail!("{} is not a GLNS1 embedding file", path.display());
    }
    let n = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(bytes[13..21].try_into().unwrap()) as usize;
    let expect = 21 + 16 * n * d;
    if bytes.len() != expect {
        bail!(
            "{}: expected {} bytes for {}x{}, found {}",
            path.display(),
            expect,
            n,
            d,
            bytes.len()
        );
    }
    let read_matrix = |offset: usize| {
        let mut m = Matrix::zeros(n, d);
        for (k, x) in m.data.iter_mut().enumerate() {
            let at = offset + 8 * k;
            *x = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        }
        m
    };
    let anchors = read_matrix(21);
    let positives = read_matrix(21 + 8 * n * d);
    Ok(EmbeddingBatch::new(anchors, positives)?)
}

/// Serialize any serde value as pretty JSON with a trailing newline.
pub fn json_bytes<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use gradlens::embeddings::random_batch;

    #[test]
    fn embs_round_trip() {
        let b = random_batch(5, 7, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.embs");
        write_embs(&path, &b).unwrap();
        let back = read_embs(&path).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn embs_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.embs");
        fs::write(&path, b"NOPE!").unwrap();
        assert!(read_embs(&path).is_err());
    }

    #[test]
    fn float_format_round_trips() {
        for &x in &[0.1, std::f64::consts::PI, 1.0 / 3.0, 1e-30, -42.5] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
    }
}
