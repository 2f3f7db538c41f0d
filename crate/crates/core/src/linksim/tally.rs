use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::Intensity;
use crate::error::{Error, Result};
use crate::states::Basis;

/// Counts for one (Alice basis, intensity) combination.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TallyCell {
    /// Pulses Alice emitted with this basis and intensity.
    pub n_sent: u64,
    /// Single-click detections where Bob measured in the same basis.
    pub n_detected: u64,
    /// Of those, detections on a wrong outcome.
    pub m_errors: u64,
    /// Single-click detections discarded by sifting.
    pub n_unsifted: u64,
    /// Sifted detections split by emitted photon number: 0, 1, 2 or more.
    pub detected_by_photons: [u64; 3],
}

impl TallyCell {
    pub fn qber(&self) -> f64 {
        if self.n_detected == 0 {
            0.0
        } else {
            self.m_errors as f64 / self.n_detected as f64
        }
    }

    fn merge(&mut self, other: &TallyCell) {
        self.n_sent += other.n_sent;
        self.n_detected += other.n_detected;
        self.m_errors += other.m_errors;
        self.n_unsifted += other.n_unsifted;
        for (a, b) in self.detected_by_photons.iter_mut().zip(other.detected_by_photons) {
            *a += b;
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Tally {
    cells: [[TallyCell; 2]; 2],
    pub elapsed: f64,
    /// Slots with clicks on more than one detector; discarded.
    pub double_clicks: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TallyRow {
    basis: String,
    intensity: String,
    n_sent: u64,
    n_detected: u64,
    m_errors: u64,
    elapsed_s: f64,
}

impl Tally {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cell(&self, basis: Basis, k: Intensity) -> &TallyCell {
        &self.cells[basis.slot()][k.slot()]
    }

    pub fn cell_mut(&mut self, basis: Basis, k: Intensity) -> &mut TallyCell {
        &mut self.cells[basis.slot()][k.slot()]
    }

    pub fn cells(&self) -> impl Iterator<Item = (Basis, Intensity, &TallyCell)> {
        Basis::BOTH.into_iter().flat_map(move |b| {
            Intensity::BOTH
                .into_iter()
                .map(move |k| (b, k, self.cell(b, k)))
        })
    }

    pub fn pulses(&self) -> u64 {
        self.cells().map(|(_, _, c)| c.n_sent).sum()
    }

    pub fn detected(&self, basis: Basis) -> u64 {
        Intensity::BOTH.iter().map(|&k| self.cell(basis, k).n_detected).sum()
    }

    pub fn errors(&self, basis: Basis) -> u64 {
        Intensity::BOTH.iter().map(|&k| self.cell(basis, k).m_errors).sum()
    }

    /// Detection-weighted QBER of a basis.
    pub fn qber(&self, basis: Basis) -> f64 {
        let n = self.detected(basis);
        if n == 0 {
            0.0
        } else {
            self.errors(basis) as f64 / n as f64
        }
    }

    pub fn merge(&mut self, other: &Tally) {
        for b in Basis::BOTH {
            for k in Intensity::BOTH {
                let o = *other.cell(b, k);
                self.cell_mut(b, k).merge(&o);
            }
        }
        self.elapsed += other.elapsed;
        self.double_clicks += other.double_clicks;
    }

    /// Checks `m_errors <= n_detected <= n_sent` for every cell.
    pub fn is_consistent(&self) -> bool {
        self.cells()
            .all(|(_, _, c)| c.m_errors <= c.n_detected && c.n_detected <= c.n_sent)
    }

    /// Writes the stable CSV form: `basis,intensity,n_sent,n_detected,m_errors,elapsed_s`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for (b, k, c) in self.cells() {
            w.serialize(TallyRow {
                basis: b.name().to_string(),
                intensity: k.name().to_string(),
                n_sent: c.n_sent,
                n_detected: c.n_detected,
                m_errors: c.m_errors,
                elapsed_s: self.elapsed,
            })
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV form; lines starting with `#` are ignored.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(input);
        let mut tally = Tally::new();
        let mut seen = [[false; 2]; 2];
        for rec in r.deserialize::<TallyRow>() {
            let row = rec.map_err(csv_error)?;
            let b = Basis::parse(&row.basis)?;
            let k = Intensity::parse(&row.intensity)?;
            if seen[b.slot()][k.slot()] {
                return Err(Error::Parse {
                    line: 0,
                    msg: format!("duplicate row for {b}/{}", k.name()),
                });
            }
            seen[b.slot()][k.slot()] = true;
            let cell = tally.cell_mut(b, k);
            cell.n_sent = row.n_sent;
            cell.n_detected = row.n_detected;
            cell.m_errors = row.m_errors;
            tally.elapsed = row.elapsed_s;
        }
        if seen.iter().flatten().any(|s| !s) {
            return Err(Error::Parse {
                line: 0,
                msg: "tally must contain one row per basis and intensity".into(),
            });
        }
        if !tally.is_consistent() {
            return Err(Error::Parse {
                line: 0,
                msg: "tally violates m_errors <= n_detected <= n_sent".into(),
            });
        }
        Ok(tally)
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse {
        line,
        msg: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Tally {
        let mut t = Tally::new();
        t.elapsed = 1.5;
        let c = t.cell_mut(Basis::Z, Intensity::Signal);
        c.n_sent = 100;
        c.n_detected = 10;
        c.m_errors = 1;
        t.cell_mut(Basis::X, Intensity::Decoy).n_sent = 7;
        t
    }

    #[test]
    fn csv_round_trip() {
        let t = sample();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("basis,intensity,n_sent,n_detected,m_errors,elapsed_s\n"));
        let back = Tally::read_csv(&buf[..]).unwrap();
        assert_eq!(back.cell(Basis::Z, Intensity::Signal), t.cell(Basis::Z, Intensity::Signal));
        assert_eq!(back.elapsed, 1.5);
    }

    #[test]
    fn rejects_inconsistent_rows() {
        let csv = "basis,intensity,n_sent,n_detected,m_errors,elapsed_s\n\
                   Z,mu1,10,20,0,1\nZ,mu2,1,0,0,1\nX,mu1,1,0,0,1\nX,mu2,1,0,0,1\n";
        assert!(Tally::read_csv(csv.as_bytes()).is_err());
    }

    #[test]
    fn rejects_missing_rows() {
        let csv = "basis,intensity,n_sent,n_detected,m_errors,elapsed_s\nZ,mu1,10,2,0,1\n";
        assert!(Tally::read_csv(csv.as_bytes()).is_err());
    }

    #[test]
    fn reports_line_of_bad_field() {
        let csv = "basis,intensity,n_sent,n_detected,m_errors,elapsed_s\nZ,mu1,ten,2,0,1\n";
        match Tally::read_csv(csv.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
