//! Benchmark dataset loading (Magellan / DeepMatcher directory layout), the
//! multi-domain registry and batch sampling.
//!
//! A domain directory holds `tableA.csv`, `tableB.csv` (first column `id`,
//! remaining columns are attributes) and `train.csv`, `valid.csv`,
//! `test.csv` with columns `ltable_id,rtable_id,label`. An empty label cell
//! means the label is withheld.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DameError, Result};
use crate::record::{Record, RecordPair};
use crate::vocab::{SerializedPair, Tokenizer};

pub const SPLIT_FILES: [&str; 3] = ["train.csv", "valid.csv", "test.csv"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.csv",
            Split::Valid => "valid.csv",
            Split::Test => "test.csv",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = DameError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(DameError::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// One side of a dataset: records keyed by id, in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    attributes: Vec<String>,
    rows: Vec<(String, Record)>,
    index: HashMap<String, usize>,
}

impl Table {
    pub fn new(attributes: Vec<String>, rows: Vec<(String, Record)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(rows.len());
        for (i, (id, rec)) in rows.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(DameError::Integrity(format!("duplicate record id `{id}`")));
            }
            let names: Vec<&str> = rec.attributes().iter().map(|(a, _)| a.as_str()).collect();
            if names != attributes.iter().map(String::as_str).collect::<Vec<_>>() {
                return Err(DameError::Integrity(format!(
                    "record `{id}` does not follow the table header"
                )));
            }
        }
        Ok(Table {
            attributes,
            rows,
            index,
        })
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn get(&self, id: &str) -> Option<&Record> {
        self.index.get(id).map(|&i| &self.rows[i].1)
    }

    pub fn rows(&self) -> &[(String, Record)] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRef {
    pub left_id: String,
    pub right_id: String,
    pub label: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainDataset {
    pub name: String,
    pub table_a: Table,
    pub table_b: Table,
    pub train: Vec<PairRef>,
    pub valid: Vec<PairRef>,
    pub test: Vec<PairRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainStats {
    pub size: usize,
    pub match_rate: f64,
    pub num_attributes: usize,
}

impl DomainDataset {
    /// Validates the dataset invariants: ids resolve, labels are binary and
    /// splits are disjoint.
    pub fn new(
        name: impl Into<String>,
        table_a: Table,
        table_b: Table,
        train: Vec<PairRef>,
        valid: Vec<PairRef>,
        test: Vec<PairRef>,
    ) -> Result<Self> {
        let ds = DomainDataset {
            name: name.into(),
            table_a,
            table_b,
            train,
            valid,
            test,
        };
        let mut seen: HashMap<(&str, &str), Split> = HashMap::new();
        for split in Split::ALL {
            for (row, p) in ds.split(split).iter().enumerate() {
                let file = split.file_name().to_string();
                if ds.table_a.get(&p.left_id).is_none() {
                    return Err(DameError::DanglingId {
                        file,
                        row: row + 1,
                        id: p.left_id.clone(),
                        table: "tableA.csv".into(),
                    });
                }
                if ds.table_b.get(&p.right_id).is_none() {
                    return Err(DameError::DanglingId {
                        file,
                        row: row + 1,
                        id: p.right_id.clone(),
                        table: "tableB.csv".into(),
                    });
                }
                if matches!(p.label, Some(l) if l > 1) {
                    return Err(DameError::Parse {
                        file,
                        row: row + 1,
                        msg: "label must be 0 or 1".into(),
                    });
                }
                if let Some(prev) = seen.insert((&p.left_id, &p.right_id), split) {
                    if prev != split {
                        return Err(DameError::Integrity(format!(
                            "pair ({}, {}) appears in both {} and {}",
                            p.left_id,
                            p.right_id,
                            prev.file_name(),
                            split.file_name()
                        )));
                    }
                }
            }
        }
        Ok(ds)
    }

    pub fn split(&self, split: Split) -> &[PairRef] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn record_pair(&self, p: &PairRef) -> RecordPair {
        // ids were checked at construction
        RecordPair {
            left: self.table_a.get(&p.left_id).expect("validated id").clone(),
            right: self.table_b.get(&p.right_id).expect("validated id").clone(),
            label: p.label,
        }
    }

    pub fn pairs(&self, split: Split) -> Vec<RecordPair> {
        self.split(split).iter().map(|p| self.record_pair(p)).collect()
    }

    /// Gold labels of a split; errors on the first withheld label.
    pub fn labels(&self, split: Split) -> Result<Vec<u8>> {
        self.split(split)
            .iter()
            .enumerate()
            .map(|(i, p)| p.label.ok_or(DameError::Unlabeled(i)))
            .collect()
    }

    /// Serialized text of every record in both tables.
    pub fn corpus(&self) -> Result<Vec<String>> {
        self.table_a
            .rows()
            .iter()
            .chain(self.table_b.rows())
            .map(|(_, r)| crate::record::serialize_record(r))
            .collect()
    }

    pub fn encode_split(&self, split: Split, tok: &Tokenizer) -> Result<Vec<SerializedPair>> {
        self.split(split)
            .iter()
            .map(|p| tok.encode_pair(&self.record_pair(p)))
            .collect()
    }
}

pub fn domain_stats(ds: &DomainDataset) -> DomainStats {
    let all = Split::ALL.iter().flat_map(|&s| ds.split(s).iter());
    let (size, matches) = all.fold((0usize, 0usize), |(n, m), p| {
        (n + 1, m + usize::from(p.label == Some(1)))
    });
    DomainStats {
        size,
        match_rate: if size == 0 { 0.0 } else { matches as f64 / size as f64 },
        num_attributes: ds.table_a.attributes().len(),
    }
}

fn require(dir: &Path, file: &str) -> Result<PathBuf> {
    let p = dir.join(file);
    if p.is_file() {
        Ok(p)
    } else {
        Err(DameError::MissingFile(p))
    }
}

fn read_table(path: &Path) -> Result<Table> {
    let file = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers.first().map(String::as_str) != Some("id") {
        return Err(DameError::Parse {
            file,
            row: 0,
            msg: "first column must be `id`".into(),
        });
    }
    let attributes: Vec<String> = headers[1..].to_vec();
    if attributes.is_empty() {
        return Err(DameError::Parse {
            file,
            row: 0,
            msg: "table has no attribute columns".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or_default().to_string();
        let attrs = attributes
            .iter()
            .enumerate()
            .map(|(c, a)| (a.clone(), rec.get(c + 1).unwrap_or_default().to_string()))
            .collect();
        let record = Record::new(attrs).map_err(|e| DameError::Parse {
            file: file.clone(),
            row: i + 1,
            msg: e.to_string(),
        })?;
        rows.push((id, record));
    }
    Table::new(attributes, rows)
}

fn read_pairs(path: &Path) -> Result<Vec<PairRef>> {
    let file = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| DameError::Parse {
            file: file.clone(),
            row: 0,
            msg: format!("missing column `{name}`"),
        })
    };
    let (l, r) = (col("ltable_id")?, col("rtable_id")?);
    let lab = headers.iter().position(|h| h == "label");
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let label = match lab.map(|c| rec.get(c).unwrap_or_default().trim()) {
            None | Some("") => None,
            Some("0") => Some(0),
            Some("1") => Some(1),
            Some(other) => {
                return Err(DameError::Parse {
                    file,
                    row: i + 1,
                    msg: format!("label `{other}` is not 0 or 1"),
                })
            }
        };
        out.push(PairRef {
            left_id: rec.get(l).unwrap_or_default().to_string(),
            right_id: rec.get(r).unwrap_or_default().to_string(),
            label,
        });
    }
    Ok(out)
}

pub fn load_domain(path: &Path) -> Result<DomainDataset> {
    let table_a = read_table(&require(path, "tableA.csv")?)?;
    let table_b = read_table(&require(path, "tableB.csv")?)?;
    let mut splits = Vec::with_capacity(3);
    for f in SPLIT_FILES {
        splits.push(read_pairs(&require(path, f)?)?);
    }
    let test = splits.pop().unwrap_or_default();
    let valid = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    let name = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    DomainDataset::new(name, table_a, table_b, train, valid, test)
}

fn write_table(table: &Table, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string()];
    header.extend(table.attributes().iter().cloned());
    w.write_record(&header)?;
    for (id, rec) in table.rows() {
        let mut row = vec![id.as_str()];
        row.extend(rec.attributes().iter().map(|(_, v)| v.as_str()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a dataset in the same directory layout `load_domain` reads.
pub fn write_domain(ds: &DomainDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_table(&ds.table_a, &dir.join("tableA.csv"))?;
    write_table(&ds.table_b, &dir.join("tableB.csv"))?;
    for split in Split::ALL {
        let mut w = csv::Writer::from_path(dir.join(split.file_name()))?;
        w.write_record(["ltable_id", "rtable_id", "label"])?;
        for p in ds.split(split) {
            let label = p.label.map(|l| l.to_string()).unwrap_or_default();
            w.write_record([p.left_id.as_str(), p.right_id.as_str(), label.as_str()])?;
        }
        w.flush()?;
    }
    Ok(())
}

/// K labeled sources plus one target domain.
#[derive(Debug, Clone)]
pub struct DomainRegistry {
    sources: Vec<DomainDataset>,
    target: DomainDataset,
}

/// Contents of `domains.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryIndex {
    pub sources: Vec<PathBuf>,
    pub target: PathBuf,
}

impl DomainRegistry {
    pub fn new(sources: Vec<DomainDataset>, target: DomainDataset) -> Result<Self> {
        if sources.is_empty() {
            return Err(DameError::Config("registry needs at least one source".into()));
        }
        let mut names = HashSet::new();
        for s in &sources {
            if !names.insert(s.name.as_str()) {
                return Err(DameError::Config(format!("duplicate source `{}`", s.name)));
            }
        }
        if names.contains(target.name.as_str()) {
            return Err(DameError::Config(format!(
                "target `{}` is also listed as a source",
                target.name
            )));
        }
        for (j, s) in sources.iter().enumerate() {
            if let Some(i) = s.train.iter().position(|p| p.label.is_none()) {
                return Err(DameError::Config(format!(
                    "source {j} (`{}`) has an unlabeled training pair at row {}",
                    s.name,
                    i + 1
                )));
            }
        }
        Ok(DomainRegistry { sources, target })
    }

    /// Loads `domains.json`; relative paths resolve against its directory.
    pub fn load(index_path: &Path) -> Result<Self> {
        let index: RegistryIndex = serde_json::from_str(&fs::read_to_string(index_path)?)?;
        let base = index_path.parent().unwrap_or(Path::new("."));
        let sources = index
            .sources
            .iter()
            .map(|p| load_domain(&base.join(p)))
            .collect::<Result<Vec<_>>>()?;
        let target = load_domain(&base.join(&index.target))?;
        DomainRegistry::new(sources, target)
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn sources(&self) -> &[DomainDataset] {
        &self.sources
    }

    pub fn source(&self, j: usize) -> Result<&DomainDataset> {
        self.sources.get(j).ok_or(DameError::DomainOutOfRange {
            index: j,
            count: self.sources.len(),
        })
    }

    pub fn target(&self) -> &DomainDataset {
        &self.target
    }

    /// Text of every record in every domain, for vocabulary building. Target
    /// records are included; they carry no labels.
    pub fn corpus(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for ds in self.sources.iter().chain(std::iter::once(&self.target)) {
            out.extend(ds.corpus()?);
        }
        Ok(out)
    }

    /// Draws `b` distinct training pairs of source `j`.
    pub fn sample_batch<R: Rng + ?Sized>(&self, j: usize, b: usize, tok: &Tokenizer, rng: &mut R) -> Result<Batch> {
        let ds = self.source(j)?;
        let items = sample_indices(ds.train.len(), b, rng)?;
        let mut pairs = Vec::with_capacity(b);
        let mut labels = Vec::with_capacity(b);
        for &i in &items {
            let p = &ds.train[i];
            pairs.push(tok.encode_pair(&ds.record_pair(p))?);
            labels.push(p.label.ok_or(DameError::Unlabeled(i))?);
        }
        Ok(Batch {
            domain_index: j,
            pairs,
            labels,
            items,
        })
    }

    /// Draws `b` target training pairs, ignoring any labels.
    pub fn sample_target<R: Rng + ?Sized>(
        &self,
        b: usize,
        tok: &Tokenizer,
        rng: &mut R,
    ) -> Result<Vec<SerializedPair>> {
        let ds = &self.target;
        let items = sample_indices(ds.train.len(), b, rng)?;
        items
            .iter()
            .map(|&i| tok.encode_pair(&ds.record_pair(&ds.train[i])))
            .collect()
    }
}

fn sample_indices<R: Rng + ?Sized>(n: usize, b: usize, rng: &mut R) -> Result<Vec<usize>> {
    if b == 0 || b > n {
        return Err(DameError::BatchTooLarge {
            requested: b,
            available: n,
        });
    }
    Ok(rand::seq::index::sample(rng, n, b).into_vec())
}

/// B serialized training pairs from a single source domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub domain_index: usize,
    pub pairs: Vec<SerializedPair>,
    pub labels: Vec<u8>,
    /// Positions in the source's training split, aligned with `pairs`.
    pub items: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::build_vocab;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    fn toy_dir(train: &str) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        write(
            p,
            "tableA.csv",
            "id,title,price\na1,sony tv,10\na2,\"lg, monitor\",\na3,dell xps,99\n",
        );
        write(
            p,
            "tableB.csv",
            "id,title,price\nb1,sony television,12\nb2,lg monitor 27,5\nb3,hp laptop,80\n",
        );
        write(p, "train.csv", train);
        write(p, "valid.csv", "ltable_id,rtable_id,label\na3,b3,0\n");
        write(p, "test.csv", "ltable_id,rtable_id,label\na3,b1,0\n");
        dir
    }

    const TRAIN3: &str = "ltable_id,rtable_id,label\na1,b1,1\na2,b2,1\na1,b2,0\n";

    #[test]
    fn loads_toy_directory() {
        let dir = toy_dir(TRAIN3);
        let ds = load_domain(dir.path()).unwrap();
        assert_eq!(ds.train.len(), 3);
        assert_eq!(ds.table_a.attributes(), ["title", "price"]);
        assert_eq!(ds.table_a.get("a2").unwrap().get("title"), Some("lg, monitor"));
        assert_eq!(ds.table_a.get("a2").unwrap().get("price"), Some(""));
        let s = domain_stats(&ds);
        assert_eq!(s.size, 5);
        assert_eq!(s.num_attributes, 2);
        assert!((s.match_rate - 0.4).abs() < 1e-12);
    }

    #[test]
    fn dangling_id_is_reported() {
        let dir = toy_dir("ltable_id,rtable_id,label\na9,b1,1\n");
        match load_domain(dir.path()) {
            Err(DameError::DanglingId { id, .. }) => assert_eq!(id, "a9"),
            other => panic!("expected dangling id error, got {other:?}"),
        }
    }

    #[test]
    fn bad_label_reports_row() {
        let dir = toy_dir("ltable_id,rtable_id,label\na1,b1,1\na2,b2,2\n");
        match load_domain(dir.path()) {
            Err(DameError::Parse { row, file, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(file, "train.csv");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_named() {
        let dir = toy_dir(TRAIN3);
        fs::remove_file(dir.path().join("valid.csv")).unwrap();
        let err = load_domain(dir.path()).unwrap_err();
        assert!(err.to_string().contains("valid.csv"), "{err}");
    }

    #[test]
    fn overlapping_splits_rejected() {
        let dir = toy_dir("ltable_id,rtable_id,label\na3,b3,0\n");
        assert!(matches!(load_domain(dir.path()), Err(DameError::Integrity(_))));
    }

    #[test]
    fn withheld_labels_load_as_none() {
        let dir = toy_dir("ltable_id,rtable_id,label\na1,b1,\na2,b2,\n");
        let ds = load_domain(dir.path()).unwrap();
        assert!(ds.train.iter().all(|p| p.label.is_none()));
        assert!(ds.labels(Split::Train).is_err());
    }

    #[test]
    fn write_then_reload_is_identical() {
        let dir = toy_dir(TRAIN3);
        let ds = load_domain(dir.path()).unwrap();
        let out = tempfile::tempdir().unwrap();
        let target = out.path().join(&ds.name);
        write_domain(&ds, &target).unwrap();
        assert_eq!(load_domain(&target).unwrap(), ds);
    }

    #[test]
    fn stats_edge_cases() {
        let mk = |labels: &[u8]| {
            let rows_a: Vec<(String, Record)> = (0..labels.len())
                .map(|i| (format!("a{i}"), Record::from_pairs([("t", "x")]).unwrap()))
                .collect();
            let rows_b: Vec<(String, Record)> = (0..labels.len())
                .map(|i| (format!("b{i}"), Record::from_pairs([("t", "y")]).unwrap()))
                .collect();
            let train = labels
                .iter()
                .enumerate()
                .map(|(i, &l)| PairRef {
                    left_id: format!("a{i}"),
                    right_id: format!("b{i}"),
                    label: Some(l),
                })
                .collect();
            DomainDataset::new(
                "toy",
                Table::new(vec!["t".into()], rows_a).unwrap(),
                Table::new(vec!["t".into()], rows_b).unwrap(),
                train,
                vec![],
                vec![],
            )
            .unwrap()
        };
        assert_eq!(domain_stats(&mk(&[0; 7])).match_rate, 0.0);
        assert_eq!(domain_stats(&mk(&[1; 10])).match_rate, 1.0);
        // Shoes-sized split: 1274 matches out of 5805
        let mut labels = vec![0u8; 5805];
        labels[..1274].iter_mut().for_each(|l| *l = 1);
        let s = domain_stats(&mk(&labels));
        assert_eq!(s.size, 5805);
        assert!((s.match_rate - 0.2195).abs() < 1e-4);
    }

    fn registry() -> (DomainRegistry, Tokenizer, tempfile::TempDir) {
        let dir = toy_dir(TRAIN3);
        let src = load_domain(dir.path()).unwrap();
        let mut tgt = src.clone();
        tgt.name = "target".into();
        let reg = DomainRegistry::new(vec![src], tgt).unwrap();
        let vocab = build_vocab(&reg.corpus().unwrap(), 1).unwrap();
        (reg, Tokenizer::new(vocab, 32), dir)
    }

    #[test]
    fn batches_are_seed_deterministic() {
        let (reg, tok, _d) = registry();
        let a = reg.sample_batch(0, 2, &tok, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = reg.sample_batch(0, 2, &tok, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn full_batch_is_permutation_with_aligned_labels() {
        let (reg, tok, _d) = registry();
        let batch = reg.sample_batch(0, 3, &tok, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut items = batch.items.clone();
        items.sort_unstable();
        assert_eq!(items, vec![0, 1, 2]);
        let split = &reg.source(0).unwrap().train;
        for (k, &i) in batch.items.iter().enumerate() {
            assert_eq!(Some(batch.labels[k]), split[i].label);
        }
    }

    #[test]
    fn oversized_batch_is_an_error() {
        let (reg, tok, _d) = registry();
        assert!(matches!(
            reg.sample_batch(0, 4, &tok, &mut ChaCha8Rng::seed_from_u64(1)),
            Err(DameError::BatchTooLarge { .. })
        ));
        assert!(reg.sample_batch(1, 1, &tok, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn single_draws_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[sample_indices(4, 1, &mut rng).unwrap()[0]] += 1;
        }
        for c in counts {
            assert!((2300..=2700).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn target_cannot_be_a_source() {
        let dir = toy_dir(TRAIN3);
        let src = load_domain(dir.path()).unwrap();
        assert!(DomainRegistry::new(vec![src.clone()], src).is_err());
    }

    #[test]
    fn registry_index_resolves_relative_paths() {
        let root = tempfile::tempdir().unwrap();
        let dir = toy_dir(TRAIN3);
        let ds = load_domain(dir.path()).unwrap();
        write_domain(&ds, &root.path().join("s1")).unwrap();
        write_domain(&ds, &root.path().join("t")).unwrap();
        fs::write(
            root.path().join("domains.json"),
            r#"{"sources": ["s1"], "target": "t"}"#,
        )
        .unwrap();
        let reg = DomainRegistry::load(&root.path().join("domains.json")).unwrap();
        assert_eq!(reg.num_sources(), 1);
        assert_eq!(reg.target().name, "t");
    }
}
