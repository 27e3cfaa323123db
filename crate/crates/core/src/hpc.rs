//! Windowed unigram/bigram instruction-class counters and labeled datasets.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::asm::{parse_listing, CategoryMap, Instruction, InstructionCategory, ParseMode};
use crate::error::{Error, Result};
use crate::mutate::{AttackKind, FirmwareImage};

pub const NUM_CLASSES: usize = 5;
pub const NUM_FEATURES: usize = NUM_CLASSES + NUM_CLASSES * NUM_CLASSES;
pub const DEFAULT_WINDOW: usize = 50;

/// One of the 30 counters: a single class or an ordered adjacent pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    Unigram(InstructionCategory),
    Bigram(InstructionCategory, InstructionCategory),
}

impl Feature {
    /// All 30 features in canonical order: `a b l n s aa ab al an as ba .. ss`.
    pub fn all() -> Vec<Feature> {
        let mut v = Vec::with_capacity(NUM_FEATURES);
        for c in InstructionCategory::COUNTED {
            v.push(Feature::Unigram(c));
        }
        for x in InstructionCategory::COUNTED {
            for y in InstructionCategory::COUNTED {
                v.push(Feature::Bigram(x, y));
            }
        }
        v
    }

    /// Position in the canonical 30-vector.
    pub fn index(self) -> usize {
        match self {
            Feature::Unigram(c) => c.counted_index().expect("counted class"),
            Feature::Bigram(x, y) => {
                NUM_CLASSES
                    + NUM_CLASSES * x.counted_index().expect("counted class")
                    + y.counted_index().expect("counted class")
            }
        }
    }

    pub fn name(self) -> String {
        match self {
            Feature::Unigram(c) => c.symbol().unwrap().to_string(),
            Feature::Bigram(x, y) => format!("{}{}", x.symbol().unwrap(), y.symbol().unwrap()),
        }
    }

    pub fn involves(self, class: InstructionCategory) -> bool {
        match self {
            Feature::Unigram(c) => c == class,
            Feature::Bigram(x, y) => x == class || y == class,
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let cats: Option<Vec<_>> = s.chars().map(InstructionCategory::from_symbol).collect();
        match cats.as_deref() {
            Some([c]) => Ok(Feature::Unigram(*c)),
            Some([x, y]) => Ok(Feature::Bigram(*x, *y)),
            _ => Err(Error::InconsistentFeatures(format!("unknown feature `{s}`"))),
        }
    }
}

impl Serialize for Feature {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for Feature {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Counter values for one window, indexed by [`Feature::index`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct HpcVector(pub [u32; NUM_FEATURES]);

impl HpcVector {
    pub fn get(&self, f: Feature) -> u32 {
        self.0[f.index()]
    }

    pub fn by_name(&self, name: &str) -> Option<u32> {
        name.parse::<Feature>().ok().map(|f| self.get(f))
    }

    pub fn unigram_sum(&self) -> u32 {
        self.0[..NUM_CLASSES].iter().sum()
    }

    pub fn bigram_sum(&self) -> u32 {
        self.0[NUM_CLASSES..].iter().sum()
    }
}

/// Counters for one window plus its bookkeeping.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Window {
    pub index: usize,
    pub len: usize,
    /// Instructions that fell in no counted class.
    pub other: u32,
    pub partial: bool,
    pub counts: HpcVector,
}

/// Bigram counter for an adjacent pair, `None` if either side is `Other`.
pub fn compute_bigram(prev: InstructionCategory, next: InstructionCategory) -> Option<Feature> {
    match (prev, next) {
        (InstructionCategory::Other, _) | (_, InstructionCategory::Other) => None,
        (x, y) => Some(Feature::Bigram(x, y)),
    }
}

/// Slice a category stream into windows of `window` instructions and count.
///
/// Pairs never straddle a window boundary. The trailing short window, if
/// any, is emitted with `partial = true`.
pub fn extract_category_windows(cats: &[InstructionCategory], window: usize) -> Vec<Window> {
    assert!(window >= 1, "window length must be at least 1");
    cats.chunks(window)
        .enumerate()
        .map(|(index, chunk)| {
            let mut counts = HpcVector::default();
            let mut other = 0;
            for (i, &c) in chunk.iter().enumerate() {
                match c.counted_index() {
                    Some(k) => counts.0[k] += 1,
                    None => other += 1,
                }
                if i > 0 {
                    if let Some(f) = compute_bigram(chunk[i - 1], c) {
                        counts.0[f.index()] += 1;
                    }
                }
            }
            Window { index, len: chunk.len(), other, partial: chunk.len() < window, counts }
        })
        .collect()
}

pub fn extract_windows(instrs: &[Instruction], window: usize) -> Vec<Window> {
    let cats: Vec<_> = instrs.iter().map(|i| i.category).collect();
    extract_category_windows(&cats, window)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Malicious,
}

impl Label {
    pub fn is_malicious(self) -> bool {
        self == Label::Malicious
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Benign => "benign",
            Label::Malicious => "malicious",
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "benign" => Ok(Label::Benign),
            "malicious" => Ok(Label::Malicious),
            other => Err(Error::Invalid(format!("unknown label `{other}`"))),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub firmware_id: String,
    pub window_index: usize,
    pub partial: bool,
    /// Values aligned with the owning dataset's `feature_names`.
    pub values: Vec<u32>,
    pub label: Label,
    pub attack_kind: Option<AttackKind>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dataset {
    pub feature_names: Vec<Feature>,
    pub samples: Vec<Sample>,
}

/// Windows of one firmware image together with its label.
#[derive(Clone, Debug)]
pub struct Run {
    pub firmware_id: String,
    pub label: Label,
    pub attack_kind: Option<AttackKind>,
    pub windows: Vec<Window>,
}

impl Run {
    pub fn new(firmware_id: impl Into<String>, attack_kind: Option<AttackKind>, windows: Vec<Window>) -> Self {
        let label = if attack_kind.is_some() { Label::Malicious } else { Label::Benign };
        Run { firmware_id: firmware_id.into(), label, attack_kind, windows }
    }
}

/// Flatten runs into a dataset over all 30 features, preserving input order.
pub fn emit_dataset(runs: &[Run]) -> Result<Dataset> {
    let feature_names = Feature::all();
    let mut samples = Vec::new();
    for run in runs {
        if (run.label == Label::Benign) != run.attack_kind.is_none() {
            return Err(Error::Invalid(format!(
                "{}: benign runs carry no attack kind and malicious runs need one",
                run.firmware_id
            )));
        }
        for w in &run.windows {
            samples.push(Sample {
                firmware_id: run.firmware_id.clone(),
                window_index: w.index,
                partial: w.partial,
                values: w.counts.0.to_vec(),
                label: run.label,
                attack_kind: run.attack_kind,
            });
        }
    }
    Ok(Dataset { feature_names, samples })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Keep only the listed features, in the given order.
    pub fn project(&self, features: &[Feature]) -> Result<Dataset> {
        let idx: Vec<usize> = features
            .iter()
            .map(|f| {
                self.feature_names
                    .iter()
                    .position(|g| g == f)
                    .ok_or_else(|| Error::InconsistentFeatures(format!("feature `{f}` not in dataset")))
            })
            .collect::<Result<_>>()?;
        let samples = self
            .samples
            .iter()
            .map(|s| Sample { values: idx.iter().map(|&i| s.values[i]).collect(), ..s.clone() })
            .collect();
        Ok(Dataset { feature_names: features.to_vec(), samples })
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    fn check(&self) -> Result<()> {
        let n = self.feature_names.len();
        if let Some(s) = self.samples.iter().find(|s| s.values.len() != n) {
            return Err(Error::InconsistentFeatures(format!(
                "{}#{} has {} values, expected {n}",
                s.firmware_id,
                s.window_index,
                s.values.len()
            )));
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        self.check()?;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["firmware_id".to_string(), "window_index".into(), "partial".into()];
        header.extend(self.feature_names.iter().map(|f| f.name()));
        header.push("label".into());
        header.push("attack_kind".into());
        w.write_record(&header)?;
        for s in &self.samples {
            let mut rec = vec![s.firmware_id.clone(), s.window_index.to_string(), s.partial.to_string()];
            rec.extend(s.values.iter().map(|v| v.to_string()));
            rec.push(s.label.to_string());
            rec.push(s.attack_kind.map(|k| k.as_str().to_string()).unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv is utf-8"))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Dataset> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let cols: Vec<&str> = header.iter().collect();
        let fixed_ok = cols.len() >= 5
            && cols[..3] == ["firmware_id", "window_index", "partial"]
            && cols[cols.len() - 2..] == ["label", "attack_kind"];
        if !fixed_ok {
            return Err(Error::InconsistentFeatures(format!("unexpected header {cols:?}")));
        }
        let feature_names: Vec<Feature> = cols[3..cols.len() - 2].iter().map(|c| c.parse()).collect::<Result<_>>()?;
        let nf = feature_names.len();
        let mut samples = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let bad = |what: &str| Error::Invalid(format!("bad {what} in dataset row {:?}", rec.position()));
            let values =
                (0..nf).map(|i| rec[3 + i].parse::<u32>().map_err(|_| bad("counter"))).collect::<Result<Vec<_>>>()?;
            let label: Label = rec[3 + nf].parse()?;
            let attack_kind = match &rec[4 + nf] {
                "" => None,
                k => Some(k.parse::<AttackKind>()?),
            };
            if label.is_malicious() != attack_kind.is_some() {
                return Err(bad("label/attack_kind pair"));
            }
            samples.push(Sample {
                firmware_id: rec[0].to_string(),
                window_index: rec[1].parse().map_err(|_| bad("window_index"))?,
                partial: rec[2].parse().map_err(|_| bad("partial flag"))?,
                values,
                label,
                attack_kind,
            });
        }
        Ok(Dataset { feature_names, samples })
    }
}

/// Parse every image and window it into one dataset, images in order.
pub fn dataset_from_images(
    images: &[FirmwareImage],
    map: &CategoryMap,
    window: usize,
    mode: ParseMode,
) -> Result<Dataset> {
    if window == 0 {
        return Err(Error::Invalid("window size must be positive".into()));
    }
    let runs = images
        .iter()
        .map(|img| {
            let parsed = parse_listing(&img.listing, map, mode)?;
            Ok(Run::new(img.id.clone(), img.attack, extract_windows(&parsed.instructions, window)))
        })
        .collect::<Result<Vec<_>>>()?;
    emit_dataset(&runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{parse_listing, CategoryMap, ParseMode};
    use InstructionCategory::*;

    const SNIPPET: &str = "\
03f6438 83a1 MOV  AL,@VarA ;Load AL with  VarA
03f6439 dc18 ADD  AL,@VarB ;Add to AL VarB
03f643a da18 ANDB AL,#0xFF ;AND AL with 0xFF
03f643b dd17 SUBB XAR4, #1 ;Subtract 1 from XAR4
03f643c d918 B    404, NEQ ;Branch Not Equal
03f6438 83a1 MOV  AL,@VarB ;Load AL with  VarB
03f6439 dc18 ADD  AL,@VarA ;Add to AL VarA
03f643a da18 ANDB AL,#0xDA ;AND AL with 0xDA
03f643b dd17 SUBB XAR2, #1 ;Subtract 1 from XAR2
03f643c d918 B    253, NEQ ;Branch Not Equal
";

    #[test]
    fn feature_order_and_names() {
        let names: Vec<String> = Feature::all().into_iter().map(|f| f.name()).collect();
        assert_eq!(
            names.join(","),
            "a,b,l,n,s,aa,ab,al,an,as,ba,bb,bl,bn,bs,la,lb,ll,ln,ls,na,nb,nl,nn,ns,sa,sb,sl,sn,ss"
        );
        for (i, f) in Feature::all().into_iter().enumerate() {
            assert_eq!(f.index(), i);
            assert_eq!(f.name().parse::<Feature>().unwrap(), f);
        }
        assert!("x".parse::<Feature>().is_err());
        assert!("abc".parse::<Feature>().is_err());
    }

    #[test]
    fn listing_one_counters() {
        let instrs = parse_listing(SNIPPET, &CategoryMap::c28x_default(), ParseMode::Strict).unwrap().instructions;
        let windows = extract_windows(&instrs, 50);
        assert_eq!(windows.len(), 1);
        let v = windows[0].counts;
        let expected = [("la", 2), ("an", 2), ("na", 2), ("ab", 2), ("bl", 1), ("l", 2), ("a", 4), ("n", 2), ("b", 2)];
        for f in Feature::all() {
            let want = expected.iter().find(|(n, _)| *n == f.name()).map_or(0, |(_, c)| *c);
            assert_eq!(v.get(f), want, "{f}");
        }
        assert!(windows[0].partial);
    }

    #[test]
    fn bigram_examples() {
        assert_eq!(compute_bigram(Load, Arithmetic).map(|f| f.name()), Some("la".into()));
        assert_eq!(compute_bigram(Branch, Branch).map(|f| f.name()), Some("bb".into()));
        assert_eq!(compute_bigram(Other, Load), None);
        assert_eq!(compute_bigram(Load, Other), None);
    }

    #[test]
    fn empty_and_single() {
        assert!(extract_category_windows(&[], 50).is_empty());
        let w = extract_category_windows(&[Arithmetic], 50);
        assert_eq!(w.len(), 1);
        assert!(w[0].partial);
        assert_eq!(w[0].counts.by_name("a"), Some(1));
        assert_eq!(w[0].counts.bigram_sum(), 0);
    }

    #[test]
    fn no_pairs_across_boundary() {
        // l|a: the pair spans windows of size 1 and must not count
        let w = extract_category_windows(&[Load, Arithmetic], 1);
        assert_eq!(w.len(), 2);
        assert!(w.iter().all(|w| w.counts.bigram_sum() == 0 && !w.partial));
        let w = extract_category_windows(&[Load, Arithmetic, Load], 2);
        assert_eq!(w[0].counts.by_name("la"), Some(1));
        assert_eq!(w[1].counts.bigram_sum(), 0);
        assert!(w[1].partial);
    }

    fn run(id: &str, kind: Option<AttackKind>, n: usize) -> Run {
        let cats: Vec<_> = (0..n).map(|i| InstructionCategory::COUNTED[i % 5]).collect();
        Run::new(id, kind, extract_category_windows(&cats, 4))
    }

    #[test]
    fn csv_layout() {
        let ds = emit_dataset(&[run("base", None, 8)]).unwrap();
        let csv = ds.to_csv_string().unwrap();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("firmware_id,window_index,partial,a,b,l,n,s,aa,"));
        assert!(lines[0].ends_with(",ss,label,attack_kind"));
        assert!(lines[1].starts_with("base,0,false,1,1,1,1,0,0,1,0,0"));
        assert!(lines[1].ends_with(",benign,"));
    }

    #[test]
    fn csv_round_trip_and_quoting() {
        let ds = emit_dataset(&[run("base, v1", None, 9), run("mut\"ant", Some(AttackKind::InputSine), 5)]).unwrap();
        let csv = ds.to_csv_string().unwrap();
        assert!(csv.contains("\"base, v1\""));
        assert!(csv.contains("\"mut\"\"ant\""));
        let back = Dataset::read_csv(csv.as_bytes()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn zero_runs_header_only() {
        let csv = emit_dataset(&[]).unwrap().to_csv_string().unwrap();
        assert_eq!(csv.lines().count(), 1);
        assert_eq!(Dataset::read_csv(csv.as_bytes()).unwrap().len(), 0);
    }

    #[test]
    fn five_firmware_groups() {
        let mut runs = vec![run("base", None, 12)];
        for k in AttackKind::ALL {
            runs.push(run(k.as_str(), Some(k), 13));
        }
        let ds = emit_dataset(&runs).unwrap();
        let mut ids: Vec<_> = ds.samples.iter().map(|s| s.firmware_id.as_str()).collect();
        ids.dedup();
        assert_eq!(ids.len(), 5);
    }

    #[test]
    fn inconsistent_rows_are_rejected() {
        let mut ds = emit_dataset(&[run("base", None, 8)]).unwrap();
        ds.samples[1].values.pop();
        assert!(matches!(ds.to_csv_string(), Err(Error::InconsistentFeatures(_))));
        let bad = "firmware_id,window_index,partial,a,zz,label,attack_kind\n";
        assert!(Dataset::read_csv(bad.as_bytes()).is_err());
    }

    #[test]
    fn projection_keeps_columns() {
        let ds = emit_dataset(&[run("base", None, 8)]).unwrap();
        let feats: Vec<Feature> = ["n", "a", "b"].iter().map(|s| s.parse().unwrap()).collect();
        let p = ds.project(&feats).unwrap();
        assert_eq!(p.samples[0].values, vec![1, 1, 1]);
        assert!(ds.project(&feats).unwrap().project(&["s".parse().unwrap()]).is_err());
    }
}
