use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelGraph;

pub const GEMM: &str = "gemm";
/// Fixed per-kernel launch overhead in synthetic tables.
pub const SYNTH_OVERHEAD_US: f64 = 1.0;

const HEADER: [&str; 8] = ["op_kind", "m", "n", "k", "weight_bits", "act_bits", "latency_us", "provenance"];

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CostKey {
    pub op_kind: String,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub weight_bits: u8,
    pub act_bits: u8,
}

impl CostKey {
    pub fn gemm(out: usize, inn: usize, weight_bits: u8, act_bits: u8) -> Self {
        CostKey { op_kind: GEMM.into(), m: 1, n: out, k: inn, weight_bits, act_bits }
    }

    pub fn macs(&self) -> u64 {
        (self.m * self.n * self.k) as u64
    }
}

impl fmt::Display for CostKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} m={} n={} k={} w{}a{}", self.op_kind, self.m, self.n, self.k, self.weight_bits, self.act_bits)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    pub latency_us: f64,
    pub provenance: String,
}

/// Kernel latencies keyed by operation, shape and operand widths.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CostTable {
    entries: BTreeMap<CostKey, CostEntry>,
}

impl CostTable {
    pub fn insert(&mut self, key: CostKey, latency_us: f64, provenance: &str) -> Result<()> {
        if !(latency_us.is_finite() && latency_us > 0.0) {
            return Err(Error::Config(format!("latency {latency_us} for {key} must be positive")));
        }
        if self.entries.contains_key(&key) {
            return Err(Error::Config(format!("duplicate cost entry {key}")));
        }
        self.entries.insert(key, CostEntry { latency_us, provenance: provenance.to_string() });
        Ok(())
    }

    pub fn get(&self, key: &CostKey) -> Option<&CostEntry> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CostKey, &CostEntry)> {
        self.entries.iter()
    }

    /// Entries where lowering one operand width (the other fixed) raises
    /// latency.
    pub fn monotonicity_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (key, e) in &self.entries {
            for other in self.entries.iter() {
                let (ok, oe) = other;
                let same_shape = ok.op_kind == key.op_kind && ok.m == key.m && ok.n == key.n && ok.k == key.k;
                let lower_w = ok.act_bits == key.act_bits && ok.weight_bits < key.weight_bits;
                let lower_a = ok.weight_bits == key.weight_bits && ok.act_bits < key.act_bits;
                if same_shape && (lower_w || lower_a) && oe.latency_us > e.latency_us {
                    out.push(format!("{ok} ({} us) slower than {key} ({} us)", oe.latency_us, e.latency_us));
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(HEADER).expect("in-memory write");
        for (k, e) in &self.entries {
            w.write_record([
                k.op_kind.clone(),
                k.m.to_string(),
                k.n.to_string(),
                k.k.to_string(),
                k.weight_bits.to_string(),
                k.act_bits.to_string(),
                e.latency_us.to_string(),
                e.provenance.clone(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    /// Parses the CSV form; monotonicity violations are logged, not fatal.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header = rdr.headers().map_err(|e| Error::Config(format!("cost table: {e}")))?.clone();
        if header.iter().collect::<Vec<_>>() != HEADER {
            return Err(Error::Config(format!("cost table header must be `{}`", HEADER.join(","))));
        }
        let mut table = CostTable::default();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Config(format!("cost table row {}: {e}", line + 1)))?;
            let bad = |field: &str| Error::Config(format!("cost table row {}: bad {field}", line + 1));
            let key = CostKey {
                op_kind: rec[0].to_string(),
                m: rec[1].parse().map_err(|_| bad("m"))?,
                n: rec[2].parse().map_err(|_| bad("n"))?,
                k: rec[3].parse().map_err(|_| bad("k"))?,
                weight_bits: rec[4].parse().map_err(|_| bad("weight_bits"))?,
                act_bits: rec[5].parse().map_err(|_| bad("act_bits"))?,
            };
            let latency: f64 = rec[6].parse().map_err(|_| bad("latency_us"))?;
            table.insert(key, latency, &rec[7])?;
        }
        for v in table.monotonicity_violations() {
            log::warn!("cost table not monotone in bit-width: {v}");
        }
        Ok(table)
    }
}

/// `MACs · max(weight_bits, act_bits)/16 · us_per_mac + 1 µs` for every
/// dense layer shape and every pair of palette widths.
pub fn synth_cost_table(model: &ModelGraph, palette: &[u8], us_per_mac: f64) -> Result<CostTable> {
    if !(us_per_mac.is_finite() && us_per_mac > 0.0) {
        return Err(Error::Config(format!("cost per MAC {us_per_mac} must be positive")));
    }
    let provenance = format!("synthetic us_per_mac={us_per_mac}");
    let mut table = CostTable::default();
    for id in model.weighted_ids() {
        let s = model.layer_weights(id)?.shape();
        for &wb in palette {
            for &ab in palette {
                let key = CostKey::gemm(s[0], s[1], wb, ab);
                if table.get(&key).is_some() {
                    continue;
                }
                let lat = key.macs() as f64 * (wb.max(ab) as f64 / 16.0) * us_per_mac + SYNTH_OVERHEAD_US;
                table.insert(key, lat, &provenance)?;
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Layer;
    use crate::tensor::Tensor;

    fn m10() -> ModelGraph {
        ModelGraph::new(10, vec![Layer::dense("fc", Tensor::zeros(vec![10, 10]), None), Layer::head("h")]).unwrap()
    }

    #[test]
    fn synthetic_formula() {
        let c = 0.25;
        let t = synth_cost_table(&m10(), &[16, 8, 4], c).unwrap();
        assert_eq!(t.len(), 9);
        assert_eq!(t.get(&CostKey::gemm(10, 10, 16, 16)).unwrap().latency_us, 100.0 * c + 1.0);
        assert_eq!(t.get(&CostKey::gemm(10, 10, 4, 8)).unwrap().latency_us, 100.0 * 0.5 * c + 1.0);
        assert!(t.monotonicity_violations().is_empty());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = synth_cost_table(&m10(), &[16, 8, 4], 1.0 / 3.0).unwrap();
        let text = t.to_csv();
        assert!(text.starts_with("op_kind,m,n,k,weight_bits,act_bits,latency_us,provenance\n"));
        assert!(!text.contains('\r'));
        let back = CostTable::from_csv(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_csv(), text);
    }

    #[test]
    fn rejects_bad_rows() {
        let h = "op_kind,m,n,k,weight_bits,act_bits,latency_us,provenance\n";
        assert!(CostTable::from_csv(&format!("{h}gemm,1,2,2,8,8,0,x\n")).is_err());
        assert!(CostTable::from_csv(&format!("{h}gemm,1,2,2,8,8,1,x\ngemm,1,2,2,8,8,2,y\n")).is_err());
        assert!(CostTable::from_csv("a,b\n").is_err());
    }

    #[test]
    fn flags_non_monotone_entries() {
        let mut t = CostTable::default();
        t.insert(CostKey::gemm(2, 2, 16, 16), 1.0, "x").unwrap();
        t.insert(CostKey::gemm(2, 2, 8, 16), 2.0, "x").unwrap();
        assert_eq!(t.monotonicity_violations().len(), 1);
    }
}
