//! Realized individual paths and populations of them.

use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scm::layout::{Domain, Layout, Schema};

/// One individual's path. `None` in `y1`/`y2` is a structurally missing
/// value, never a 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub l0: Vec<f64>,
    pub a: u8,
    /// `l[t - 1]` holds the covariates of time `t`.
    pub l: Vec<Vec<u8>>,
    pub z1: Vec<u8>,
    pub z2: Vec<u8>,
    pub y1: Vec<Option<u8>>,
    pub y2: Option<u8>,
    pub y: u8,
}

/// The structural rules every trajectory obeys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Invariant {
    /// `z1` and `z2` never step back from 1 to 0.
    AbsorbingMediators,
    /// `y1_t` missing exactly when `z2_t = 0`.
    InfantMissingness,
    /// `y1_t = 0` stays 0.
    InfantDeathAbsorbing,
    /// `y2` missing exactly when `z2_tau = 0` or `y1_tau = 0`.
    HivMissingness,
    /// `y = 1` iff `z2_tau = 1`, `y1_tau = 1` and `y2 = 1`.
    CompositeOutcome,
}

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Invariant::AbsorbingMediators => "mediators must be absorbing (nondecreasing in t)",
            Invariant::InfantMissingness => "y1_t must be missing exactly when z2_t = 0",
            Invariant::InfantDeathAbsorbing => "y1_t = 0 must persist",
            Invariant::HivMissingness => "y2 must be missing exactly when z2_tau = 0 or y1_tau = 0",
            Invariant::CompositeOutcome => "y must equal 1 iff z2_tau = 1, y1_tau = 1 and y2 = 1",
        };
        f.write_str(s)
    }
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.z1.len()
    }

    pub(crate) fn from_state(layout: &Layout, state: &[f64]) -> Self {
        let bin = |v: f64| v as u8;
        let tri = |v: f64| if v.is_nan() { None } else { Some(v as u8) };
        Trajectory {
            l0: state[layout.baseline.clone()].to_vec(),
            a: bin(state[layout.exposure]),
            l: layout
                .slices
                .iter()
                .map(|s| {
                    state[s.covariates.clone()]
                        .iter()
                        .map(|v| bin(*v))
                        .collect()
                })
                .collect(),
            z1: layout.slices.iter().map(|s| bin(state[s.death])).collect(),
            z2: layout.slices.iter().map(|s| bin(state[s.birth])).collect(),
            y1: layout.slices.iter().map(|s| tri(state[s.infant])).collect(),
            y2: tri(state[layout.hiv_free]),
            y: bin(state[layout.composite]),
        }
    }

    pub(crate) fn to_state(&self, layout: &Layout) -> Vec<f64> {
        let tri = |v: Option<u8>| v.map_or(f64::NAN, f64::from);
        let mut state = vec![0.0; layout.len()];
        state[layout.baseline.clone()].copy_from_slice(&self.l0);
        state[layout.exposure] = f64::from(self.a);
        for (t, s) in layout.slices.iter().enumerate() {
            for (k, node) in s.covariates.clone().enumerate() {
                state[node] = f64::from(self.l[t][k]);
            }
            state[s.death] = f64::from(self.z1[t]);
            state[s.birth] = f64::from(self.z2[t]);
            state[s.infant] = tri(self.y1[t]);
        }
        state[layout.hiv_free] = tri(self.y2);
        state[layout.composite] = f64::from(self.y);
        state
    }

    /// Every structural rule this trajectory breaks, in a fixed order.
    pub fn violations(&self) -> Vec<Invariant> {
        let mut out = Vec::new();
        let tau = self.horizon();
        if tau == 0 {
            return out;
        }
        let monotone = |v: &[u8]| v.windows(2).all(|w| w[0] <= w[1]) && v.iter().all(|x| *x <= 1);
        if !monotone(&self.z1) || !monotone(&self.z2) {
            out.push(Invariant::AbsorbingMediators);
        }
        if (0..tau).any(|t| self.y1[t].is_none() != (self.z2[t] == 0)) {
            out.push(Invariant::InfantMissingness);
        }
        if (1..tau).any(|t| self.y1[t - 1] == Some(0) && self.y1[t].is_some_and(|v| v != 0)) {
            out.push(Invariant::InfantDeathAbsorbing);
        }
        let last_y1 = self.y1[tau - 1];
        if self.y2.is_none() != (self.z2[tau - 1] == 0 || last_y1 == Some(0)) {
            out.push(Invariant::HivMissingness);
        }
        let composite = self.z2[tau - 1] == 1 && last_y1 == Some(1) && self.y2 == Some(1);
        if (self.y == 1) != composite {
            out.push(Invariant::CompositeOutcome);
        }
        out
    }
}

/// A collection of trajectories sharing one column layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub schema: Schema,
    pub rows: Vec<Trajectory>,
}

impl Population {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn mean_y(&self) -> f64 {
        self.rows.iter().map(|r| f64::from(r.y)).sum::<f64>() / self.rows.len() as f64
    }

    /// Total invariant violations across all rows.
    pub fn violation_count(&self) -> usize {
        self.rows.iter().map(|r| r.violations().len()).sum()
    }

    pub fn header(&self) -> Vec<String> {
        csv_header(&self.schema)
    }

    /// One row per individual; missing infant values are empty fields.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.header())?;
        let mut record = Vec::new();
        for row in &self.rows {
            record.clear();
            record.extend(row.l0.iter().map(|v| v.to_string()));
            record.push(row.a.to_string());
            for covs in &row.l {
                record.extend(covs.iter().map(|v| v.to_string()));
            }
            record.extend(row.z1.iter().map(|v| v.to_string()));
            record.extend(row.z2.iter().map(|v| v.to_string()));
            record.extend(
                row.y1
                    .iter()
                    .map(|v| v.map_or(String::new(), |x| x.to_string())),
            );
            record.push(row.y2.map_or(String::new(), |x| x.to_string()));
            record.push(row.y.to_string());
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Parse the CSV layout produced by [`Population::write_csv`]. Values are
    /// read as-is; structural checks belong to the caller.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let cols = parse_header(&header)?;

        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |c: usize| rec.get(c).unwrap_or("").trim();
            let num = |c: usize| -> Result<f64> {
                field(c).parse::<f64>().map_err(|_| Error::Dataset {
                    row: i,
                    rule: format!("column {} is not numeric: {:?}", header[c], field(c)),
                })
            };
            let bin = |c: usize| -> Result<u8> {
                match field(c) {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    other => Err(Error::Dataset {
                        row: i,
                        rule: format!("column {} must be 0 or 1, found {other:?}", header[c]),
                    }),
                }
            };
            let tri = |c: usize| -> Result<Option<u8>> {
                if field(c).is_empty() {
                    Ok(None)
                } else {
                    bin(c).map(Some)
                }
            };
            rows.push(Trajectory {
                l0: cols.l0.iter().map(|c| num(*c)).collect::<Result<_>>()?,
                a: bin(cols.a)?,
                l: cols
                    .l
                    .iter()
                    .map(|cs| cs.iter().map(|c| bin(*c)).collect::<Result<Vec<_>>>())
                    .collect::<Result<_>>()?,
                z1: cols.z1.iter().map(|c| bin(*c)).collect::<Result<_>>()?,
                z2: cols.z2.iter().map(|c| bin(*c)).collect::<Result<_>>()?,
                y1: cols.y1.iter().map(|c| tri(*c)).collect::<Result<_>>()?,
                y2: tri(cols.y2)?,
                y: bin(cols.y)?,
            });
        }

        let baseline = cols
            .l0_names
            .iter()
            .enumerate()
            .map(|(k, name)| (name.clone(), infer_domain(rows.iter().map(|r| r.l0[k]))))
            .collect();
        Ok(Population {
            schema: Schema {
                horizon: cols.z1.len(),
                baseline,
                covariates: cols.l_names,
            },
            rows,
        })
    }
}

pub(crate) fn csv_header(schema: &Schema) -> Vec<String> {
    let mut h: Vec<String> = schema
        .baseline
        .iter()
        .map(|(n, _)| format!("l0.{n}"))
        .collect();
    h.push("a".into());
    for (t, covs) in schema.covariates.iter().enumerate() {
        h.extend(covs.iter().map(|n| format!("l{}.{n}", t + 1)));
    }
    for prefix in ["z1", "z2", "y1"] {
        h.extend((1..=schema.horizon).map(|t| format!("{prefix}_{t}")));
    }
    h.push("y2".into());
    h.push("y".into());
    h
}

struct Columns {
    l0_names: Vec<String>,
    l0: Vec<usize>,
    a: usize,
    l_names: Vec<Vec<String>>,
    l: Vec<Vec<usize>>,
    z1: Vec<usize>,
    z2: Vec<usize>,
    y1: Vec<usize>,
    y2: usize,
    y: usize,
}

fn parse_header(header: &[String]) -> Result<Columns> {
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("missing column {name:?}")))
    };
    let tau = header.iter().filter(|h| h.starts_with("z1_")).count();
    if tau == 0 {
        return Err(Error::Config("no z1_<t> columns".into()));
    }
    let mut l0_names = Vec::new();
    let mut l0 = Vec::new();
    let mut l_names = vec![Vec::new(); tau];
    let mut l = vec![Vec::new(); tau];
    for (c, h) in header.iter().enumerate() {
        let Some((prefix, name)) = h.split_once('.') else {
            continue;
        };
        let Some(t) = prefix
            .strip_prefix('l')
            .and_then(|t| t.parse::<usize>().ok())
        else {
            continue;
        };
        if t == 0 {
            l0_names.push(name.to_string());
            l0.push(c);
        } else if t <= tau {
            l_names[t - 1].push(name.to_string());
            l[t - 1].push(c);
        } else {
            return Err(Error::Config(format!("column {h:?} beyond horizon {tau}")));
        }
    }
    let series = |p: &str| {
        (1..=tau)
            .map(|t| find(&format!("{p}_{t}")))
            .collect::<Result<Vec<_>>>()
    };
    Ok(Columns {
        l0_names,
        l0,
        a: find("a")?,
        l_names,
        l,
        z1: series("z1")?,
        z2: series("z2")?,
        y1: series("y1")?,
        y2: find("y2")?,
        y: find("y")?,
    })
}

fn infer_domain(values: impl Iterator<Item = f64>) -> Domain {
    let mut max = 0.0f64;
    for v in values {
        if v < 0.0 || v.fract() != 0.0 {
            return Domain::Continuous;
        }
        max = max.max(v);
    }
    if max <= 1.0 {
        Domain::Binary
    } else {
        Domain::Categorical(max as usize + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trajectory {
        Trajectory {
            l0: vec![1.0],
            a: 1,
            l: vec![vec![0], vec![1]],
            z1: vec![0, 0],
            z2: vec![0, 1],
            y1: vec![None, Some(1)],
            y2: Some(1),
            y: 1,
        }
    }

    #[test]
    fn valid_trajectory_has_no_violations() {
        assert!(sample().violations().is_empty());
    }

    #[test]
    fn each_rule_detected() {
        let mut t = sample();
        t.z2 = vec![1, 0];
        assert!(t.violations().contains(&Invariant::AbsorbingMediators));

        let mut t = sample();
        t.y1[0] = Some(0);
        assert!(t.violations().contains(&Invariant::InfantMissingness));

        let mut t = sample();
        t.z2 = vec![1, 1];
        t.y1 = vec![Some(0), Some(1)];
        assert!(t.violations().contains(&Invariant::InfantDeathAbsorbing));

        let mut t = sample();
        t.y2 = None;
        assert_eq!(
            t.violations(),
            vec![Invariant::HivMissingness, Invariant::CompositeOutcome]
        );

        let mut t = sample();
        t.y = 0;
        assert_eq!(t.violations(), vec![Invariant::CompositeOutcome]);
    }

    #[test]
    fn csv_renders_missing_as_empty() {
        let pop = Population {
            schema: Schema {
                horizon: 2,
                baseline: vec![("w".into(), Domain::Binary)],
                covariates: vec![vec!["art".into()], vec!["art".into()]],
            },
            rows: vec![sample()],
        };
        let text = pop.to_csv_string();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "l0.w,a,l1.art,l2.art,z1_1,z1_2,z2_1,z2_2,y1_1,y1_2,y2,y"
        );
        assert_eq!(lines.next().unwrap(), "1,1,0,1,0,0,0,1,,1,1,1");
        let back = Population::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back, pop);
    }
}
