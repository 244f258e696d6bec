//! CSV and JSON renderings of pipeline artifacts.
//!
//! Floats use Rust's shortest round-trip formatting, so parsing a written
//! value gives back the same bits.

use std::path::Path;

use anyhow::{bail, Context};
use eigencl::analysis::detection::{DetectionRow, HistogramBin};
use eigencl::analysis::staging::ClusterProfile;
use eigencl::data::{Dataset, Stage};
use eigencl::spectral::StressWeights;
use eigencl::trainer::{GridResult, TrainHistory};
use ndarray::Array2;
use serde::Serialize;

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_bytes<I>(header: &[&str], rows: I) -> anyhow::Result<Vec<u8>>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

pub fn json_bytes<T: Serialize>(value: &T) -> anyhow::Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| eigencl::Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(eigencl::Error::from)
        .with_context(|| format!("parsing {}", path.display()))
}

/// Header plus records; errors carry the file name and 1-based line.
struct Table {
    name: String,
    header: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path) -> anyhow::Result<Table> {
        let mut r =
            csv::Reader::from_path(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        Ok(Table {
            name: path.display().to_string(),
            header,
            rows,
        })
    }

    fn expect_header(&self, prefix: &[&str]) -> anyhow::Result<()> {
        if self.header.len() < prefix.len() || self.header.iter().zip(prefix).any(|(a, b)| a != b) {
            bail!(eigencl::Error::Format(format!(
                "{}: header must start with {}, got {}",
                self.name,
                prefix.join(","),
                self.header.join(",")
            )));
        }
        Ok(())
    }

    fn field<T: std::str::FromStr>(&self, row: usize, col: usize) -> anyhow::Result<T> {
        let s = self.rows[row].get(col).unwrap_or("");
        s.parse().map_err(|_| {
            eigencl::Error::Parse {
                line: row + 2,
                msg: format!(
                    "{}: cannot parse '{s}' in column {}",
                    self.name, self.header[col]
                ),
            }
            .into()
        })
    }

    fn ids(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| r.get(0).unwrap_or("").to_string())
            .collect()
    }
}

fn check_ids(found: &[String], dataset: &Dataset, what: &str) -> anyhow::Result<()> {
    if found.len() != dataset.len()
        || found
            .iter()
            .zip(dataset.series())
            .any(|(a, s)| *a != s.patch_id)
    {
        bail!(eigencl::Error::Contract(format!(
            "{what} rows do not match the dataset's patches"
        )));
    }
    Ok(())
}

pub fn weights_csv(dataset: &Dataset, w: &StressWeights) -> anyhow::Result<Vec<u8>> {
    csv_bytes(
        &["patch_id", "weight", "component"],
        dataset.series().iter().zip(&w.w).map(|(s, x)| {
            vec![
                s.patch_id.clone(),
                x.to_string(),
                w.source_component.to_string(),
            ]
        }),
    )
}

pub fn read_weights(path: &Path, dataset: &Dataset) -> anyhow::Result<StressWeights> {
    let t = Table::read(path)?;
    t.expect_header(&["patch_id", "weight", "component"])?;
    check_ids(&t.ids(), dataset, "weights")?;
    let w = (0..t.rows.len())
        .map(|i| t.field(i, 1))
        .collect::<anyhow::Result<Vec<f64>>>()?;
    let comps = (0..t.rows.len())
        .map(|i| t.field(i, 2))
        .collect::<anyhow::Result<Vec<usize>>>()?;
    let component = comps[0];
    if comps.iter().any(|&c| c != component) {
        bail!(eigencl::Error::Format(format!(
            "{}: mixed component indices",
            t.name
        )));
    }
    Ok(StressWeights {
        w,
        source_component: component,
    })
}

pub fn spectrum_csv(eigenvalues: &[f64], explained: &[f64]) -> anyhow::Result<Vec<u8>> {
    csv_bytes(
        &["component", "eigenvalue", "explained_ratio"],
        eigenvalues
            .iter()
            .zip(explained)
            .enumerate()
            .map(|(i, (l, r))| vec![i.to_string(), l.to_string(), r.to_string()]),
    )
}

pub fn read_principal_ratio(path: &Path) -> anyhow::Result<f64> {
    let t = Table::read(path)?;
    t.expect_header(&["component", "eigenvalue", "explained_ratio"])?;
    if t.rows.is_empty() {
        bail!(eigencl::Error::Format(format!("{}: no components", t.name)));
    }
    t.field(0, 2)
}

pub fn history_csv(h: &TrainHistory) -> anyhow::Result<Vec<u8>> {
    csv_bytes(
        &["epoch", "mean_loss", "grad_norm", "seconds"],
        h.epochs.iter().map(|e| {
            vec![
                e.epoch.to_string(),
                e.mean_loss.to_string(),
                e.grad_norm.to_string(),
                e.seconds.to_string(),
            ]
        }),
    )
}

pub fn embeddings_csv(ids: &[String], z: &Array2<f64>) -> anyhow::Result<Vec<u8>> {
    let mut header = vec!["patch_id".to_string()];
    header.extend((0..z.ncols()).map(|j| format!("z_{j}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_bytes(
        &header,
        ids.iter().zip(z.rows()).map(|(id, r)| {
            let mut rec = vec![id.clone()];
            rec.extend(r.iter().map(f64::to_string));
            rec
        }),
    )
}

pub fn read_embeddings(path: &Path, dataset: &Dataset) -> anyhow::Result<Array2<f64>> {
    let t = Table::read(path)?;
    t.expect_header(&["patch_id", "z_0"])?;
    check_ids(&t.ids(), dataset, "embedding")?;
    let d = t.header.len() - 1;
    let mut z = Array2::zeros((t.rows.len(), d));
    for i in 0..t.rows.len() {
        for j in 0..d {
            z[[i, j]] = t.field(i, j + 1)?;
        }
    }
    Ok(z)
}

pub fn labels_csv(ids: &[String], labels: &[usize]) -> anyhow::Result<Vec<u8>> {
    csv_bytes(
        &["patch_id", "cluster"],
        ids.iter()
            .zip(labels)
            .map(|(id, l)| vec![id.clone(), l.to_string()]),
    )
}

pub fn elbow_csv(inertias: &[f64]) -> anyhow::Result<Vec<u8>> {
    csv_bytes(
        &["k", "inertia"],
        inertias
            .iter()
            .enumerate()
            .map(|(i, v)| vec![(i + 1).to_string(), v.to_string()]),
    )
}

pub fn stages_csv(
    dataset: &Dataset,
    labels: &[usize],
    stages: &[Stage],
) -> anyhow::Result<Vec<u8>> {
    csv_bytes(
        &["patch_id", "mean_ndre", "cluster", "stage"],
        dataset
            .series()
            .iter()
            .zip(labels)
            .zip(stages)
            .map(|((s, l), st)| {
                vec![
                    s.patch_id.clone(),
                    s.mean().to_string(),
                    l.to_string(),
                    st.to_string(),
                ]
            }),
    )
}

pub fn read_stages(path: &Path, dataset: &Dataset) -> anyhow::Result<Vec<Stage>> {
    let t = Table::read(path)?;
    t.expect_header(&["patch_id", "mean_ndre", "cluster", "stage"])?;
    check_ids(&t.ids(), dataset, "stage")?;
    (0..t.rows.len()).map(|i| t.field(i, 3)).collect()
}

pub fn profiles_csv(dataset: &Dataset, profiles: &[ClusterProfile]) -> anyhow::Result<Vec<u8>> {
    let dates = dataset.dates();
    csv_bytes(
        &["cluster", "size", "day", "mean", "half_width"],
        profiles.iter().flat_map(|p| {
            dates.iter().enumerate().map(move |(t, d)| {
                vec![
                    p.cluster.to_string(),
                    p.size.to_string(),
                    d.to_string(),
                    p.mean[t].to_string(),
                    p.half_width[t].to_string(),
                ]
            })
        }),
    )
}

pub fn detection_csv(rows: &[DetectionRow]) -> anyhow::Result<Vec<u8>> {
    csv_bytes(
        &[
            "patch_id",
            "stage",
            "cluster",
            "detection_day",
            "crossing_day",
            "lead_days",
        ],
        rows.iter().map(|r| {
            vec![
                r.patch_id.clone(),
                r.stage.to_string(),
                r.cluster.to_string(),
                opt(r.detection_day),
                opt(r.crossing_day),
                opt(r.lead_days),
            ]
        }),
    )
}

pub fn histogram_csv(bins: &[HistogramBin]) -> anyhow::Result<Vec<u8>> {
    csv_bytes(
        &["bin_lo", "bin_hi", "count"],
        bins.iter().map(|b| {
            vec![
                b.bin_lo.to_string(),
                b.bin_hi.to_string(),
                b.count.to_string(),
            ]
        }),
    )
}

/// One row per cell in ranking order.
pub fn grid_csv(g: &GridResult) -> anyhow::Result<Vec<u8>> {
    csv_bytes(
        &[
            "rank",
            "cell",
            "lambda",
            "tau",
            "sigma",
            "margin",
            "silhouette",
            "dbi",
            "chi",
            "distance_correlation",
            "final_loss",
            "error",
        ],
        g.ranking.iter().enumerate().map(|(rank, &i)| {
            let c = &g.cells[i];
            vec![
                (rank + 1).to_string(),
                c.index.to_string(),
                c.hyper.lambda.to_string(),
                c.hyper.tau.to_string(),
                c.hyper.sigma.to_string(),
                c.hyper.margin.to_string(),
                opt(c.silhouette),
                opt(c.dbi),
                opt(c.chi),
                opt(c.distance_correlation),
                opt(c.final_loss),
                c.error.clone().unwrap_or_default(),
            ]
        }),
    )
}

pub fn projection_csv(
    dataset: &Dataset,
    coords: &Array2<f64>,
    labels: &[usize],
) -> anyhow::Result<Vec<u8>> {
    csv_bytes(
        &["patch_id", "pc1", "pc2", "cluster", "mean_ndre"],
        dataset
            .series()
            .iter()
            .zip(coords.rows())
            .zip(labels)
            .map(|((s, c), l)| {
                vec![
                    s.patch_id.clone(),
                    c[0].to_string(),
                    c[1].to_string(),
                    l.to_string(),
                    s.mean().to_string(),
                ]
            }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use eigencl::data::{synthesize, SynthConfig};

    fn small() -> Dataset {
        synthesize(&SynthConfig {
            n_patches: 12,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn weights_round_trip_bitwise() {
        let d = small();
        let w = StressWeights {
            w: (0..12).map(|i| (i as f64 * 0.1).sin() / 3.0).collect(),
            source_component: 1,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.csv");
        std::fs::write(&p, weights_csv(&d, &w).unwrap()).unwrap();
        assert_eq!(read_weights(&p, &d).unwrap(), w);
    }

    #[test]
    fn embeddings_round_trip_bitwise() {
        let d = small();
        let z = Array2::from_shape_fn((12, 3), |(i, j)| ((i * 3 + j) as f64).cos() * 1e-7);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        std::fs::write(&p, embeddings_csv(&d.patch_ids(), &z).unwrap()).unwrap();
        assert_eq!(read_embeddings(&p, &d).unwrap(), z);
    }

    #[test]
    fn reordered_rows_rejected() {
        let d = small();
        let mut ids = d.patch_ids();
        ids.swap(0, 1);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        std::fs::write(&p, embeddings_csv(&ids, &Array2::zeros((12, 2))).unwrap()).unwrap();
        assert!(read_embeddings(&p, &d).is_err());
    }

    #[test]
    fn bad_cell_reports_line() {
        let d = small();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let mut text =
            String::from_utf8(stages_csv(&d, &[0; 12], &[Stage::Healthy; 12]).unwrap()).unwrap();
        text = text.replacen("healthy", "wilted", 1);
        std::fs::write(&p, text).unwrap();
        let err = format!("{:#}", read_stages(&p, &d).unwrap_err());
        assert!(err.contains("line 2"), "{err}");
    }
}
