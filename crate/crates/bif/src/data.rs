//! Synthetic datasets and their CSV form.

use std::io::{Read, Write};

use anyhow::{bail, Context, Result};
use bif_core::rng::{streams, RngStream};
use bif_core::Dataset;

use crate::config::ExperimentConfig;

/// `n / K` draws from `N(mean_k, I)` per group, interleaved so item `i` belongs to
/// group `i mod K`. Labels are the group indices.
pub fn synth_gmm_data(n: usize, means: &[Vec<f64>], rng: &mut RngStream) -> Result<Dataset> {
    let k = means.len();
    if k == 0 {
        bail!("need at least one mean");
    }
    let dim = means[0].len();
    if means.iter().any(|m| m.len() != dim) {
        bail!("cluster means have different dimensions");
    }
    if !n.is_multiple_of(k) {
        bail!("n = {n} is not divisible by K = {k}");
    }
    let mut items = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        items.extend(means[c].iter().map(|m| m + rng.normal()));
        labels.push(c);
    }
    Ok(Dataset::from_flat(dim, items, Some(labels))?)
}

/// Train and test sets for `cfg`, from independent substreams of the seed.
pub fn generate(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let root = RngStream::with_stream(cfg.seed, streams::DATA);
    let means = cfg.means();
    let mut train_rng = root.substream(0);
    let mut test_rng = root.substream(1);
    let test_n = cfg.n_test - cfg.n_test % cfg.k;
    let train = synth_gmm_data(cfg.n - cfg.n % cfg.k, &means, &mut train_rng)?;
    let test = synth_gmm_data(test_n.max(cfg.k), &means, &mut test_rng)?;
    Ok((train, test))
}

/// The first `per_cluster` items of each listed group, in index order.
pub fn cluster_removal(data: &Dataset, clusters: &[usize], per_cluster: usize) -> Result<Vec<usize>> {
    let labels = data.labels().context("cluster removal needs labelled data")?;
    let mut out = Vec::new();
    for &c in clusters {
        let picked: Vec<usize> = labels.iter().enumerate().filter(|(_, &l)| l == c).map(|(i, _)| i).take(per_cluster).collect();
        if picked.len() < per_cluster {
            bail!("group {c} has only {} items, cannot remove {per_cluster}", picked.len());
        }
        out.extend(picked);
    }
    Ok(out)
}

/// Items to forget according to `cfg`.
pub fn removal_set(cfg: &ExperimentConfig, data: &Dataset) -> Result<Vec<usize>> {
    if !cfg.remove_indices.is_empty() {
        return Ok(cfg.remove_indices.clone());
    }
    cluster_removal(data, &cfg.remove_clusters, cfg.remove_per_cluster)
}

/// Writes `x0, …, x{d-1}, label` rows. The label column is empty for unlabelled data.
pub fn write_csv<W: Write>(data: &Dataset, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    wr.write_record(&header)?;
    for i in 0..data.len() {
        let mut row: Vec<String> = data.datum_unaudited(i).x.iter().map(|v| v.to_string()).collect();
        row.push(data.label(i).map(|l| l.to_string()).unwrap_or_default());
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Dataset> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers()?.clone();
    let dim = header.len().checked_sub(1).filter(|&d| d > 0).context("CSV needs feature columns and a label column")?;
    if header.get(dim) != Some("label") {
        bail!("last CSV column must be `label`");
    }
    let mut items = Vec::new();
    let mut labels = Vec::new();
    let mut any_label = false;
    let mut any_blank = false;
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        for j in 0..dim {
            let v: f64 = rec[j].trim().parse().with_context(|| format!("row {}: bad number {:?}", line + 1, &rec[j]))?;
            items.push(v);
        }
        let l = rec[dim].trim();
        if l.is_empty() {
            any_blank = true;
            labels.push(0);
        } else {
            any_label = true;
            labels.push(l.parse().with_context(|| format!("row {}: bad label {l:?}", line + 1))?);
        }
    }
    if any_label && any_blank {
        bail!("either every row or no row must carry a label");
    }
    Ok(Dataset::from_flat(dim, items, any_label.then_some(labels))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use bif_core::seeded_rng;

    #[test]
    fn equal_groups_and_cluster_means() {
        let means = vec![vec![2.0, 2.0], vec![-2.0, 2.0], vec![-2.0, -2.0], vec![2.0, -2.0]];
        let d = synth_gmm_data(2000, &means, &mut seeded_rng(1)).unwrap();
        let labels = d.labels().unwrap();
        for (c, m) in means.iter().enumerate() {
            let idx: Vec<usize> = (0..2000).filter(|&i| labels[i] == c).collect();
            assert_eq!(idx.len(), 500);
            for j in 0..2 {
                let mean = idx.iter().map(|&i| d.datum_unaudited(i).x[j]).sum::<f64>() / 500.0;
                assert!((mean - m[j]).abs() <= 3.0 / 500f64.sqrt());
            }
        }
        assert!(synth_gmm_data(10, &means, &mut seeded_rng(1)).is_err());
        assert!(synth_gmm_data(8, &[vec![0.0], vec![1.0, 2.0]], &mut seeded_rng(1)).is_err());
    }

    #[test]
    fn csv_round_trip_is_byte_identical() {
        let d = synth_gmm_data(12, &[vec![0.0, 1.0], vec![3.0, -1.0]], &mut seeded_rng(2)).unwrap();
        let mut a = Vec::new();
        write_csv(&d, &mut a).unwrap();
        let back = read_csv(&a[..]).unwrap();
        let mut b = Vec::new();
        write_csv(&back, &mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(back.labels(), d.labels());
    }

    #[test]
    fn removal_takes_first_items_of_each_group() {
        let d = synth_gmm_data(40, &[vec![0.0], vec![1.0], vec![2.0], vec![3.0]], &mut seeded_rng(3)).unwrap();
        assert_eq!(cluster_removal(&d, &[1, 3], 2).unwrap(), vec![1, 5, 3, 7]);
        assert!(cluster_removal(&d, &[0], 11).is_err());
    }
}
