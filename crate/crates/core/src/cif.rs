//! Cumulative incidence of the two failure types under competing risks.
//!
//! Aalen–Johansen estimator: at each distinct event time `t` with `d_k`
//! failures of type `k` among `n` units at risk,
//! `CIF_k(t) = CIF_k(t-) + S(t-) * d_k / n`, where `S` is the all-cause
//! Kaplan–Meier survival. Censored units leave the risk set after their
//! time. Without censoring this is the empirical fraction of type-`k`
//! failures observed by `t`.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{EventRecord, EventType};
use crate::error::{MtfsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CifTable {
    pub stratum: BTreeMap<String, String>,
    /// Distinct event times (censor-only times are not listed).
    pub times: Vec<f64>,
    pub cif_n: Vec<f64>,
    pub cif_t: Vec<f64>,
    /// All-cause survival just after each time.
    pub survival: Vec<f64>,
    /// Units at risk just before each time.
    pub n_at_risk: Vec<usize>,
    pub n_events_n: usize,
    pub n_events_t: usize,
    pub n_censored: usize,
}

impl CifTable {
    pub fn label(&self) -> String {
        if self.stratum.is_empty() {
            "all".to_string()
        } else {
            self.stratum
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(",")
        }
    }

    fn curve(&self, kind: EventType) -> Option<&[f64]> {
        match kind {
            EventType::N => Some(&self.cif_n),
            EventType::T => Some(&self.cif_t),
            EventType::Censored => None,
        }
    }

    /// CSV columns `time, cif_N, cif_T, survival, n_at_risk`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["time", "cif_N", "cif_T", "survival", "n_at_risk"])?;
        for i in 0..self.times.len() {
            w.write_record([
                self.times[i].to_string(),
                self.cif_n[i].to_string(),
                self.cif_t[i].to_string(),
                self.survival[i].to_string(),
                self.n_at_risk[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Right-continuous evaluation of the step function; 0 before the first
/// event time. `Censored` has no incidence curve and always yields 0.
pub fn cif_at(table: &CifTable, kind: EventType, t: f64) -> f64 {
    let Some(curve) = table.curve(kind) else {
        return 0.0;
    };
    let idx = table.times.partition_point(|&x| x <= t);
    if idx == 0 {
        0.0
    } else {
        curve[idx - 1]
    }
}

fn estimate_one(stratum: BTreeMap<String, String>, records: &[&EventRecord]) -> CifTable {
    let mut sorted: Vec<&EventRecord> = records.to_vec();
    sorted.sort_by(|a, b| a.event_time.total_cmp(&b.event_time));

    let mut table = CifTable {
        stratum,
        times: Vec::new(),
        cif_n: Vec::new(),
        cif_t: Vec::new(),
        survival: Vec::new(),
        n_at_risk: Vec::new(),
        n_events_n: 0,
        n_events_t: 0,
        n_censored: 0,
    };
    let mut at_risk = sorted.len();
    let (mut surv, mut cif_n, mut cif_t) = (1.0_f64, 0.0_f64, 0.0_f64);

    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].event_time;
        let (mut d_n, mut d_t, mut d_c) = (0usize, 0usize, 0usize);
        while i < sorted.len() && sorted[i].event_time == t {
            match sorted[i].event_type {
                EventType::N => d_n += 1,
                EventType::T => d_t += 1,
                EventType::Censored => d_c += 1,
            }
            i += 1;
        }
        let events = d_n + d_t;
        if events > 0 {
            let n = at_risk as f64;
            cif_n += surv * d_n as f64 / n;
            cif_t += surv * d_t as f64 / n;
            surv *= 1.0 - events as f64 / n;
            table.times.push(t);
            // Rounding can push a complete incidence a few ulps past 1.
            table.cif_n.push(cif_n.min(1.0));
            table.cif_t.push(cif_t.min(1.0));
            table.survival.push(surv);
            table.n_at_risk.push(at_risk);
        }
        table.n_events_n += d_n;
        table.n_events_t += d_t;
        table.n_censored += d_c;
        // Censored units at a tied time count as at risk for that time's events.
        at_risk -= events + d_c;
    }
    table
}

/// One table per stratum, strata keyed by the values of `group_by` and
/// returned in key order. Strata without any failure are omitted.
pub fn estimate_cif<S: AsRef<str>>(events: &[EventRecord], group_by: &[S]) -> Result<Vec<CifTable>> {
    if events.is_empty() {
        return Err(MtfsError::EmptyInput("no event records".into()));
    }
    if let Some((i, e)) = events
        .iter()
        .enumerate()
        .find(|(_, e)| !(e.event_time > 0.0 && e.event_time.is_finite()))
    {
        return Err(MtfsError::InvalidRow {
            row: i,
            message: format!("event_time must be positive and finite, got {}", e.event_time),
        });
    }

    let mut groups: BTreeMap<BTreeMap<String, String>, Vec<&EventRecord>> = BTreeMap::new();
    for (i, e) in events.iter().enumerate() {
        let key = group_by
            .iter()
            .map(|k| {
                let k = k.as_ref();
                e.stratum_keys
                    .get(k)
                    .map(|v| (k.to_string(), v.clone()))
                    .ok_or_else(|| MtfsError::InvalidRow {
                        row: i,
                        message: format!("record has no stratum key {k:?}"),
                    })
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        groups.entry(key).or_default().push(e);
    }

    let mut tables = Vec::with_capacity(groups.len());
    for (key, records) in groups {
        let table = estimate_one(key, &records);
        if table.times.is_empty() {
            log::warn!("stratum {} has no failures; omitted", table.label());
            continue;
        }
        tables.push(table);
    }
    Ok(tables)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: f64, k: EventType) -> EventRecord {
        EventRecord::new(t, k)
    }

    #[test]
    fn uncensored_hand_enumeration() {
        let events = [ev(1.0, EventType::N), ev(2.0, EventType::T), ev(3.0, EventType::N)];
        let t = &estimate_cif::<&str>(&events, &[]).unwrap()[0];
        assert_eq!(t.times, vec![1.0, 2.0, 3.0]);
        let close = |a: f64, b: f64| (a - b).abs() < 1e-15;
        assert!(close(t.cif_n[0], 1.0 / 3.0));
        assert!(close(t.cif_n[2], 2.0 / 3.0));
        assert!(close(t.cif_t[1], 1.0 / 3.0));
        assert!(close(t.cif_n[2] + t.cif_t[2], 1.0));
        assert_eq!(t.n_at_risk, vec![3, 2, 1]);
    }

    #[test]
    fn single_event() {
        let t = &estimate_cif::<&str>(&[ev(5.0, EventType::N)], &[]).unwrap()[0];
        assert_eq!(cif_at(t, EventType::N, 5.0), 1.0);
        assert_eq!(cif_at(t, EventType::N, 50.0), 1.0);
        assert_eq!(cif_at(t, EventType::N, 4.9), 0.0);
        assert_eq!(cif_at(t, EventType::T, 10.0), 0.0);
    }

    #[test]
    fn censored_hand_computation() {
        let events = [
            ev(1.0, EventType::N),
            ev(2.0, EventType::Censored),
            ev(3.0, EventType::T),
        ];
        let t = &estimate_cif::<&str>(&events, &[]).unwrap()[0];
        assert_eq!(t.times, vec![1.0, 3.0]);
        assert!((t.cif_n[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((t.survival[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(t.n_at_risk, vec![3, 1]);
        assert!((t.cif_t[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(t.n_censored, 1);
    }

    #[test]
    fn step_queries() {
        let events = [ev(1.0, EventType::N), ev(2.0, EventType::T)];
        let t = &estimate_cif::<&str>(&events, &[]).unwrap()[0];
        assert_eq!(cif_at(t, EventType::N, 0.0), 0.0);
        assert_eq!(cif_at(t, EventType::T, 2.0), 0.5);
        assert_eq!(cif_at(t, EventType::T, 1.999), 0.0);
        assert_eq!(cif_at(t, EventType::N, 1e9), 0.5);
    }

    #[test]
    fn stratified_and_errors() {
        let events = [
            ev(1.0, EventType::N).with_key("car", "G"),
            ev(2.0, EventType::T).with_key("car", "NG"),
            ev(3.0, EventType::Censored).with_key("car", "X"),
        ];
        let tables = estimate_cif(&events, &["car"]).unwrap();
        // stratum X has no failures
        assert_eq!(tables.len(), 2);
        assert_eq!(tables[0].stratum["car"], "G");
        assert_eq!(tables[1].label(), "car=NG");

        assert!(matches!(
            estimate_cif::<&str>(&[], &[]),
            Err(MtfsError::EmptyInput(_))
        ));
        assert!(estimate_cif::<&str>(&[ev(-1.0, EventType::N)], &[]).is_err());
        assert!(estimate_cif(&events, &["wheel"]).is_err());
    }
}
