//! Secure L1 norm of the entrywise product of per-party columns.
//!
//! Every holder contributes a list of columns of equal shape; all of them
//! learn `sum_r prod_i col_i[j][r]` for every column `j`. Three backends:
//!
//! * `evaluator`: holders send their columns to a party outside the holder
//!   set, which returns the norms. That party sees every column.
//! * `masked-chain`: the product circulates through the holders, each one
//!   multiplying in its column and a private scalar mask per column. The last
//!   holder sums, and a reverse pass divides the masks back out. Holders see
//!   masked partial products.
//! * `cleartext`: the leader collects the plain columns. Test oracle only.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::crypto::real::random_mask;
use crate::error::{ProtocolError, Result};
use crate::netsim::wire::{NormColumns, NormValues};
use crate::netsim::{Transport, WireMessage};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NormBackend {
    #[default]
    Evaluator,
    MaskedChain,
    Cleartext,
}

impl fmt::Display for NormBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormBackend::Evaluator => "evaluator",
            NormBackend::MaskedChain => "masked-chain",
            NormBackend::Cleartext => "cleartext",
        })
    }
}

impl FromStr for NormBackend {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "evaluator" => Ok(NormBackend::Evaluator),
            "masked-chain" => Ok(NormBackend::MaskedChain),
            "cleartext" => Ok(NormBackend::Cleartext),
            other => Err(ProtocolError::Invalid(format!(
                "unknown normalization backend `{other}` (expected evaluator, masked-chain or cleartext)"
            ))),
        }
    }
}

/// Plain computation of the norms, shared by the backends and the tests.
pub fn l1_hadamard(inputs: &[&[Vec<f64>]]) -> Result<Vec<f64>> {
    let first = inputs.first().ok_or_else(|| ProtocolError::Invalid("no columns".into()))?;
    for cols in inputs {
        if cols.len() != first.len() || cols.iter().zip(first.iter()).any(|(a, b)| a.len() != b.len()) {
            return Err(ProtocolError::Invalid("column shapes differ between parties".into()));
        }
    }
    Ok((0..first.len())
        .map(|j| {
            (0..first[j].len())
                .map(|r| inputs.iter().map(|cols| cols[j][r]).product::<f64>())
                .sum()
        })
        .collect())
}

fn check_norms(overlap: &str, norms: &[f64]) -> Result<()> {
    if norms.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(ProtocolError::DegenerateOverlap(overlap.to_string()));
    }
    Ok(())
}

/// Runs one normalization session. `inputs` lists each holder with its
/// columns, in ring order; `evaluator` is the outside party used by the
/// evaluator backend, which falls back to the masked chain when there is none.
/// Returns the norms every holder ends up with.
pub fn secure_l1_hadamard<R: Rng + ?Sized>(
    net: &mut dyn Transport,
    session: &str,
    overlap: &str,
    inputs: &[(&str, Vec<Vec<f64>>)],
    backend: NormBackend,
    evaluator: Option<&str>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if inputs.len() < 2 {
        return Err(ProtocolError::Invalid("secure normalization needs at least two holders".into()));
    }
    let views: Vec<&[Vec<f64>]> = inputs.iter().map(|(_, c)| c.as_slice()).collect();
    l1_hadamard(&views)?;
    let norms = match (backend, evaluator) {
        (NormBackend::Evaluator, Some(eval)) => star(net, session, overlap, inputs, eval, true)?,
        (NormBackend::Cleartext, _) => {
            let leader = inputs[0].0;
            star(net, session, overlap, &inputs[1..], leader, false)?;
            let norms = l1_hadamard(&views)?;
            for (p, _) in &inputs[1..] {
                let back = NormValues {
                    overlap: overlap.to_string(),
                    values: norms.clone(),
                };
                net.send(&WireMessage::new(session, leader, p, &back)?)?;
                net.recv(leader, p)?.decode::<NormValues>()?;
            }
            norms
        }
        (NormBackend::MaskedChain, _) | (NormBackend::Evaluator, None) => chain(net, session, overlap, inputs, rng)?,
    };
    check_norms(overlap, &norms)?;
    Ok(norms)
}

/// Everyone in `inputs` sends columns to `hub`. With `reply`, the hub
/// computes the norms over what it received and answers every sender.
fn star(
    net: &mut dyn Transport,
    session: &str,
    overlap: &str,
    inputs: &[(&str, Vec<Vec<f64>>)],
    hub: &str,
    reply: bool,
) -> Result<Vec<f64>> {
    for (p, cols) in inputs {
        let msg = NormColumns {
            overlap: overlap.to_string(),
            columns: cols.clone(),
        };
        net.send(&WireMessage::new(session, p, hub, &msg)?)?;
    }
    let mut received = Vec::with_capacity(inputs.len());
    for (p, _) in inputs {
        received.push(net.recv(p, hub)?.decode::<NormColumns>()?.columns);
    }
    if !reply {
        return Ok(vec![]);
    }
    let views: Vec<&[Vec<f64>]> = received.iter().map(Vec::as_slice).collect();
    let norms = l1_hadamard(&views)?;
    for (p, _) in inputs {
        let back = NormValues {
            overlap: overlap.to_string(),
            values: norms.clone(),
        };
        net.send(&WireMessage::new(session, hub, p, &back)?)?;
    }
    let mut seen = None;
    for (p, _) in inputs {
        let got = net.recv(hub, p)?.decode::<NormValues>()?.values;
        seen = Some(got);
    }
    Ok(seen.expect("at least one holder"))
}

fn chain<R: Rng + ?Sized>(
    net: &mut dyn Transport,
    session: &str,
    overlap: &str,
    inputs: &[(&str, Vec<Vec<f64>>)],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let k = inputs.len();
    let ncols = inputs[0].1.len();
    let masks: Vec<Vec<f64>> = (0..k).map(|_| (0..ncols).map(|_| random_mask(rng)).collect()).collect();

    // Forward pass: running masked Hadamard product.
    let mut running: Vec<Vec<f64>> = inputs[0]
        .1
        .iter()
        .zip(&masks[0])
        .map(|(col, m)| col.iter().map(|x| x * m).collect())
        .collect();
    for i in 1..k {
        let (prev, cur) = (inputs[i - 1].0, inputs[i].0);
        let msg = NormColumns {
            overlap: overlap.to_string(),
            columns: running,
        };
        net.send(&WireMessage::new(session, prev, cur, &msg)?)?;
        let got = net.recv(prev, cur)?.decode::<NormColumns>()?.columns;
        if got.len() != ncols {
            return Err(ProtocolError::Unexpected("masked chain column count changed".into()));
        }
        running = got
            .iter()
            .zip(&inputs[i].1)
            .zip(&masks[i])
            .map(|((acc, col), m)| acc.iter().zip(col).map(|(a, x)| a * x * m).collect())
            .collect();
    }

    // Reverse pass: the last holder sums, then every holder strips its mask.
    let mut sums: Vec<f64> = running
        .iter()
        .zip(&masks[k - 1])
        .map(|(col, m)| col.iter().sum::<f64>() / m)
        .collect();
    for i in (0..k - 1).rev() {
        let (from, to) = (inputs[i + 1].0, inputs[i].0);
        let msg = NormValues {
            overlap: overlap.to_string(),
            values: sums,
        };
        net.send(&WireMessage::new(session, from, to, &msg)?)?;
        sums = net
            .recv(from, to)?
            .decode::<NormValues>()?
            .values
            .iter()
            .zip(&masks[i])
            .map(|(s, m)| s / m)
            .collect();
    }

    let first = inputs[0].0;
    for (p, _) in &inputs[1..] {
        let msg = NormValues {
            overlap: overlap.to_string(),
            values: sums.clone(),
        };
        net.send(&WireMessage::new(session, first, p, &msg)?)?;
        net.recv(first, p)?.decode::<NormValues>()?;
    }
    Ok(sums)
}
