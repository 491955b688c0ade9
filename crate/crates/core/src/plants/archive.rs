//! Snapshot archives: episodes of observables with the control held on each
//! step, stored as CSV with a JSON metadata sidecar.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::edmd::SnapshotSet;
use crate::error::{Error, Result};

pub const METADATA_FILE: &str = "metadata.json";

/// One recorded trajectory. Row `j` holds the observable at `t[j]` and the
/// control held on `[t[j], t[j+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: usize,
    pub t: Vec<f64>,
    pub u: Vec<f64>,
    /// `q x n` observables, one column per row of the file.
    pub z: DMatrix<f64>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Consecutive pairs grouped by the control held over each step.
    pub fn pairs_by_label(&self, h: f64) -> Result<Vec<SnapshotSet>> {
        let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
        for j in 0..self.len().saturating_sub(1) {
            let u = self.u[j];
            match groups.iter_mut().find(|(label, _)| *label == u) {
                Some((_, cols)) => cols.push(j),
                None => groups.push((u, vec![j])),
            }
        }
        groups
            .into_iter()
            .map(|(label, cols)| {
                let q = self.z.nrows();
                let z = DMatrix::from_fn(q, cols.len(), |i, c| self.z[(i, cols[c])]);
                let z_next = DMatrix::from_fn(q, cols.len(), |i, c| self.z[(i, cols[c] + 1)]);
                SnapshotSet::new(z, z_next, label, h)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMetadata {
    pub q: usize,
    pub h: f64,
    /// Control values present in the archive, ascending.
    pub labels: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotArchive {
    pub q: usize,
    pub h: f64,
    pub episodes: Vec<Episode>,
}

impl SnapshotArchive {
    pub fn new(q: usize, h: f64, episodes: Vec<Episode>) -> Result<Self> {
        if q == 0 || !(h > 0.0) {
            return Err(Error::invalid("archive needs q >= 1 and h > 0"));
        }
        for ep in &episodes {
            if ep.z.nrows() != q || ep.z.ncols() != ep.len() || ep.u.len() != ep.len() {
                return Err(Error::invalid(format!("episode {} has inconsistent columns", ep.id)));
            }
        }
        Ok(SnapshotArchive { q, h, episodes })
    }

    /// Distinct control values in ascending order.
    pub fn labels(&self) -> Vec<f64> {
        let mut labels: Vec<f64> = Vec::new();
        for ep in &self.episodes {
            for &u in &ep.u[..ep.len().saturating_sub(1)] {
                if !labels.contains(&u) {
                    labels.push(u);
                }
            }
        }
        labels.sort_by(f64::total_cmp);
        labels
    }

    pub fn metadata(&self, seed: Option<u64>) -> ArchiveMetadata {
        ArchiveMetadata {
            q: self.q,
            h: self.h,
            labels: self.labels(),
            seed,
        }
    }

    /// Pairs formed inside episodes only, grouped by exact control value and
    /// sorted by label.
    pub fn to_snapshots(&self) -> Result<Vec<SnapshotSet>> {
        let mut per_label: Vec<(f64, Vec<SnapshotSet>)> = Vec::new();
        for ep in &self.episodes {
            for set in ep.pairs_by_label(self.h)? {
                let label = set.control_label();
                match per_label.iter_mut().find(|(l, _)| *l == label) {
                    Some((_, sets)) => sets.push(set),
                    None => per_label.push((label, vec![set])),
                }
            }
        }
        per_label.sort_by(|a, b| a.0.total_cmp(&b.0));
        per_label.iter().map(|(_, sets)| SnapshotSet::concat(sets)).collect()
    }

    /// Splits whole episodes: the last `n_test` episodes are held out.
    pub fn split_episodes(&self, n_test: usize) -> Result<(SnapshotArchive, SnapshotArchive)> {
        if n_test == 0 || n_test >= self.episodes.len() {
            return Err(Error::invalid(format!(
                "cannot hold out {n_test} of {} episodes",
                self.episodes.len()
            )));
        }
        let cut = self.episodes.len() - n_test;
        Ok((
            SnapshotArchive::new(self.q, self.h, self.episodes[..cut].to_vec())?,
            SnapshotArchive::new(self.q, self.h, self.episodes[cut..].to_vec())?,
        ))
    }

    /// One fold per episode: the pairs of all other episodes against the
    /// pairs of the held-out one, both grouped by label.
    pub fn leave_one_episode_out(&self) -> Result<Vec<(Vec<SnapshotSet>, Vec<SnapshotSet>)>> {
        if self.episodes.len() < 2 {
            return Err(Error::invalid("leave-one-episode-out needs at least two episodes"));
        }
        (0..self.episodes.len())
            .map(|i| {
                let mut rest = self.episodes.clone();
                let held = rest.remove(i);
                let train = SnapshotArchive::new(self.q, self.h, rest)?.to_snapshots()?;
                Ok((train, held.pairs_by_label(self.h)?))
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_episodes(writer, self.q, &self.episodes)
    }

    /// Writes one CSV per episode plus the metadata sidecar into `dir`.
    pub fn write_dir(&self, dir: &Path, seed: Option<u64>) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut paths = Vec::with_capacity(self.episodes.len());
        for ep in &self.episodes {
            let path = dir.join(format!("episode_{:03}.csv", ep.id));
            let mut buf = Vec::new();
            write_episodes(&mut buf, self.q, std::slice::from_ref(ep))?;
            write_atomic(&path, &buf)?;
            paths.push(path);
        }
        let meta = serde_json::to_vec_pretty(&self.metadata(seed))?;
        write_atomic(&dir.join(METADATA_FILE), &meta)?;
        Ok(paths)
    }

    /// Parses CSV rows with the given sample step.
    pub fn read_csv<R: Read>(reader: R, h: f64) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let q = parse_header(&headers)?;
        let mut partial: Vec<(usize, Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            if record.len() != q + 3 {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} fields, found {}", q + 3, record.len()),
                });
            }
            let field = |i: usize| -> Result<f64> {
                let v: f64 = record[i].trim().parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("cannot parse '{}' in column '{}'", &record[i], &headers[i]),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        message: format!("non-finite value in column '{}'", &headers[i]),
                    });
                }
                Ok(v)
            };
            let id: usize = record[0].trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("invalid episode id '{}'", &record[0]),
            })?;
            let t = field(1)?;
            let u = field(2)?;
            let z = (0..q).map(|i| field(3 + i)).collect::<Result<Vec<_>>>()?;

            let start_new = partial.last().is_none_or(|ep| ep.0 != id);
            if start_new {
                if partial.iter().any(|ep| ep.0 == id) {
                    return Err(Error::Parse {
                        line,
                        message: format!("episode {id} is not contiguous"),
                    });
                }
                partial.push((id, Vec::new(), Vec::new(), Vec::new()));
            }
            let (_, ts, us, zs) = partial.last_mut().expect("episode exists");
            if let Some(&prev) = ts.last() {
                let dt = t - prev;
                if (dt - h).abs() > 1e-9 * h.max(t.abs()) {
                    return Err(Error::Parse {
                        line,
                        message: format!("nonuniform timestamps: step {dt} differs from h = {h}"),
                    });
                }
            }
            ts.push(t);
            us.push(u);
            zs.extend(z);
        }
        let episodes = partial
            .into_iter()
            .map(|(id, t, u, z)| Episode {
                id,
                z: DMatrix::from_vec(q, t.len(), z),
                t,
                u,
            })
            .collect();
        SnapshotArchive::new(q, h, episodes)
    }

    /// Merges archives with identical `q` and `h`; episode ids must not clash.
    pub fn merge(parts: Vec<SnapshotArchive>) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::invalid("no archive parts"))?;
        let (q, h) = (first.q, first.h);
        let mut episodes = Vec::new();
        for part in parts {
            if part.q != q || part.h != h {
                return Err(Error::invalid("archive parts differ in q or h"));
            }
            for ep in part.episodes {
                if episodes.iter().any(|e: &Episode| e.id == ep.id) {
                    return Err(Error::invalid(format!("episode {} appears twice", ep.id)));
                }
                episodes.push(ep);
            }
        }
        episodes.sort_by_key(|e| e.id);
        SnapshotArchive::new(q, h, episodes)
    }
}

fn parse_header(headers: &csv::StringRecord) -> Result<usize> {
    let bad = |msg: String| Error::Parse { line: 1, message: msg };
    if headers.len() < 4 {
        return Err(bad(format!("header has {} columns, need at least 4", headers.len())));
    }
    for (i, name) in ["episode", "t", "u"].iter().enumerate() {
        if headers[i].trim() != *name {
            return Err(bad(format!("unknown header column '{}', expected '{name}'", &headers[i])));
        }
    }
    for (i, name) in headers.iter().skip(3).enumerate() {
        if name.trim() != format!("z{}", i + 1) {
            return Err(bad(format!("unknown header column '{name}', expected 'z{}'", i + 1)));
        }
    }
    Ok(headers.len() - 3)
}

fn write_episodes<W: Write>(writer: W, q: usize, episodes: &[Episode]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["episode".to_string(), "t".into(), "u".into()];
    header.extend((1..=q).map(|i| format!("z{i}")));
    wtr.write_record(&header)?;
    for ep in episodes {
        for j in 0..ep.len() {
            let mut row = vec![ep.id.to_string(), ep.t[j].to_string(), ep.u[j].to_string()];
            row.extend(ep.z.column(j).iter().map(|v| v.to_string()));
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads an archive from a CSV file or from a directory of CSV files. The
/// sample step comes from the `metadata.json` sidecar next to the data.
pub fn ingest(path: &Path) -> Result<SnapshotArchive> {
    let (dir, files) = if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        (path.to_path_buf(), files)
    } else {
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        (dir, vec![path.to_path_buf()])
    };
    if files.is_empty() {
        return Err(Error::invalid(format!("no CSV files in {}", path.display())));
    }
    let meta: ArchiveMetadata = serde_json::from_slice(&fs::read(dir.join(METADATA_FILE))?)?;
    let mut parts = Vec::with_capacity(files.len());
    for file in &files {
        let archive = SnapshotArchive::read_csv(fs::File::open(file)?, meta.h).map_err(|e| match e {
            Error::Parse { line, message } => Error::Parse {
                line,
                message: format!("{}: {message}", file.display()),
            },
            other => other,
        })?;
        if archive.q != meta.q {
            return Err(Error::invalid(format!(
                "{} has {} observables, metadata declares {}",
                file.display(),
                archive.q,
                meta.q
            )));
        }
        parts.push(archive);
    }
    SnapshotArchive::merge(parts)
}
