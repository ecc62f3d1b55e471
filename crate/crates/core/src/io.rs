//! On-disk city directories and ground truth.
//!
//! A city directory holds `features.csv` (a `region_id` column, then one
//! column per feature; masked columns hold `NaN`), `mask.csv`
//! (`feature_name,observed`), `distances.csv` (dense, `region_id` header
//! row and column) and `flows.csv` (`origin_id,dest_id,flow` for every
//! observed pair). A `truth/` subdirectory may add `dag.json`,
//! `features.csv` and `flows.csv` with the unmasked values.

use std::fs;
use std::path::{Path, PathBuf};

use crate::dag::CausalDag;
use crate::data::{off_diagonal_pairs, CityDataset, CityRole, FeatureMatrix, OdMatrix, RegionSet, Topology};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::synthcity::CityPair;

fn parse_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

fn parse_f64(path: &Path, s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| parse_err(path, format!("{s:?}: {e}")))
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

pub fn write_features(path: &Path, regions: &RegionSet, features: &FeatureMatrix) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["region_id".to_string()];
    header.extend(features.names.iter().cloned());
    w.write_record(&header)?;
    for (r, id) in regions.ids().iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(features.values.row(r).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Region ids, feature names and values (NaN allowed).
pub fn read_features(path: &Path) -> Result<(Vec<String>, Vec<String>, Matrix)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("region_id") {
        return Err(parse_err(path, "first column must be region_id"));
    }
    let names = header[1..].to_vec();
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(parse_err(path, format!("row {} has {} fields", ids.len(), rec.len())));
        }
        ids.push(rec[0].to_string());
        for v in rec.iter().skip(1) {
            data.push(parse_f64(path, v)?);
        }
    }
    let n = ids.len();
    Ok((ids, names.clone(), Matrix::from_vec(n, names.len(), data)))
}

fn write_city_files(dir: &Path, city: &CityDataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_features(&dir.join("features.csv"), &city.regions, &city.features)?;

    let mut w = writer(&dir.join("mask.csv"))?;
    w.write_record(["feature_name", "observed"])?;
    for (name, &obs) in city.features.names.iter().zip(&city.features.observed) {
        w.write_record([name.as_str(), if obs { "true" } else { "false" }])?;
    }
    w.flush()?;

    let ids = city.regions.ids();
    let mut w = writer(&dir.join("distances.csv"))?;
    let mut header = vec!["region_id".to_string()];
    header.extend(ids.iter().cloned());
    w.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(city.topology.distances.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;

    write_flows(&dir.join("flows.csv"), &city.regions, &city.od.flows, &city.od.observed_pairs)
}

pub fn write_flows(path: &Path, regions: &RegionSet, flows: &Matrix, pairs: &[(usize, usize)]) -> Result<()> {
    let ids = regions.ids();
    let mut w = writer(path)?;
    w.write_record(["origin_id", "dest_id", "flow"])?;
    for &(o, d) in pairs {
        w.write_record([ids[o].as_str(), ids[d].as_str(), &flows.get(o, d).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Flow matrix (unlisted pairs are zero) and the listed pairs.
pub fn read_flows(path: &Path, regions: &RegionSet) -> Result<(Matrix, Vec<(usize, usize)>)> {
    let n = regions.count();
    let mut flows = Matrix::zeros(n, n);
    let mut pairs = Vec::new();
    let mut r = csv::Reader::from_path(path)?;
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(parse_err(path, "expected origin_id,dest_id,flow"));
        }
        let o = regions
            .index_of(&rec[0])
            .ok_or_else(|| parse_err(path, format!("unknown origin {:?}", &rec[0])))?;
        let d = regions
            .index_of(&rec[1])
            .ok_or_else(|| parse_err(path, format!("unknown destination {:?}", &rec[1])))?;
        flows.set(o, d, parse_f64(path, &rec[2])?);
        pairs.push((o, d));
    }
    Ok((flows, pairs))
}

pub fn write_city(dir: &Path, city: &CityDataset) -> Result<()> {
    write_city_files(dir, city)
}

/// Read a city directory. The role is `Source` when every feature is
/// observed and every off-diagonal pair has a flow, `Target` otherwise.
pub fn read_city(dir: &Path) -> Result<CityDataset> {
    let fpath = dir.join("features.csv");
    let (ids, names, values) = read_features(&fpath)?;
    let regions = RegionSet::new(ids)?;

    let mpath = dir.join("mask.csv");
    let mut observed = vec![true; names.len()];
    let mut r = csv::Reader::from_path(&mpath)?;
    for rec in r.records() {
        let rec = rec?;
        let j = names
            .iter()
            .position(|n| n == &rec[0])
            .ok_or_else(|| parse_err(&mpath, format!("unknown feature {:?}", &rec[0])))?;
        observed[j] = match rec[1].trim() {
            "true" | "1" => true,
            "false" | "0" => false,
            other => return Err(parse_err(&mpath, format!("bad flag {other:?}"))),
        };
    }
    let features = FeatureMatrix::new(values, names, observed)?;

    let dpath = dir.join("distances.csv");
    let mut r = csv::Reader::from_path(&dpath)?;
    let header: Vec<String> = r.headers()?.iter().skip(1).map(str::to_string).collect();
    if header != regions.ids() {
        return Err(parse_err(&dpath, "header does not match features.csv region ids"));
    }
    let n = regions.count();
    let mut data = Vec::with_capacity(n * n);
    for rec in r.records() {
        let rec = rec?;
        for v in rec.iter().skip(1) {
            data.push(parse_f64(&dpath, v)?);
        }
    }
    if data.len() != n * n {
        return Err(parse_err(&dpath, format!("expected {n}x{n} distances")));
    }
    let topology = Topology::new(Matrix::from_vec(n, n, data))?;

    let (flows, pairs) = read_flows(&dir.join("flows.csv"), &regions)?;
    let od = OdMatrix::new(flows, pairs)?;
    let role = if features.is_complete() && od.observed_pairs.len() == off_diagonal_pairs(n).len() {
        CityRole::Source
    } else {
        CityRole::Target
    };
    CityDataset {
        regions,
        features,
        topology,
        od,
        role,
    }
    .validate()
}

/// Ground truth attached to a target directory.
#[derive(Debug, Clone)]
pub struct TruthFiles {
    pub dag: Option<CausalDag>,
    pub features: FeatureMatrix,
    pub od: OdMatrix,
}

pub fn write_truth(dir: &Path, regions: &RegionSet, dag: &CausalDag, features: &FeatureMatrix, od: &OdMatrix) -> Result<()> {
    let t = dir.join("truth");
    fs::create_dir_all(&t)?;
    fs::write(t.join("dag.json"), serde_json::to_string_pretty(dag)?)?;
    write_features(&t.join("features.csv"), regions, features)?;
    write_flows(&t.join("flows.csv"), regions, &od.flows, &off_diagonal_pairs(od.n_regions()))
}

pub fn read_truth(dir: &Path, regions: &RegionSet) -> Result<TruthFiles> {
    let t = dir.join("truth");
    let missing: Vec<String> = ["features.csv", "flows.csv"]
        .iter()
        .map(|f| t.join(f))
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }
    let dag_path = t.join("dag.json");
    let dag = if dag_path.exists() {
        Some(serde_json::from_str(&fs::read_to_string(&dag_path)?)?)
    } else {
        None
    };
    let fpath = t.join("features.csv");
    let (ids, names, values) = read_features(&fpath)?;
    if ids != regions.ids() {
        return Err(parse_err(&fpath, "region ids differ from the city"));
    }
    let features = FeatureMatrix::complete(values, names)?;
    let (flows, pairs) = read_flows(&t.join("flows.csv"), regions)?;
    Ok(TruthFiles {
        dag,
        features,
        od: OdMatrix::new(flows, pairs)?,
    })
}

/// `source/` and `target/` (with `target/truth/`) under `dir`.
pub fn write_pair(dir: &Path, pair: &CityPair) -> Result<(PathBuf, PathBuf)> {
    let src = dir.join("source");
    let tar = dir.join("target");
    write_city(&src, &pair.source)?;
    write_city(&tar, &pair.target)?;
    write_truth(&tar, &pair.target.regions, &pair.truth.dag, &pair.truth.target_features, &pair.truth.target_od)?;
    Ok((src, tar))
}
