//! Plain-text adjacency format.
//!
//! ```text
//! N phi_N seed family
//! [positions
//!  x_0
//!  ...
//!  x_{N-1}
//!  edges]
//! j k w
//! ...
//! ```
//!
//! Indices are 0-based. The position block is written only when the
//! positions differ from the canonical grid of the family's domain.

use std::io::{BufRead, Write};

use super::{Domain, Network};
use crate::error::{Error, Result};

fn domain_for(family: &str) -> Domain {
    if family == "power-law" {
        Domain::UnitInterval
    } else {
        Domain::Circle
    }
}

pub fn write_network<W: Write>(network: &Network, mut out: W) -> Result<()> {
    writeln!(
        out,
        "{} {} {} {}",
        network.n(),
        network.phi(),
        network.seed(),
        network.family()
    )?;
    let canonical = domain_for(network.family()).canonical_positions(network.n());
    if canonical.as_slice() != network.positions() {
        writeln!(out, "positions")?;
        for x in network.positions() {
            writeln!(out, "{x}")?;
        }
        writeln!(out, "edges")?;
    }
    for (j, k, w) in network.edges() {
        writeln!(out, "{j} {k} {w}")?;
    }
    Ok(())
}

pub fn read_network<R: BufRead>(input: R) -> Result<Network> {
    let mut lines = input.lines().enumerate();
    let parse_err = |line: usize, message: String| Error::Parse {
        line: line + 1,
        message,
    };

    let (ln, header) = lines.next().ok_or_else(|| parse_err(0, "empty input".into()))?;
    let header = header?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 {
        return Err(parse_err(
            ln,
            format!("header needs `N phi_N seed family`, got {header:?}"),
        ));
    }
    let n: usize = fields[0].parse().map_err(|e| parse_err(ln, format!("N: {e}")))?;
    let phi: f64 = fields[1].parse().map_err(|e| parse_err(ln, format!("phi_N: {e}")))?;
    let seed: u64 = fields[2].parse().map_err(|e| parse_err(ln, format!("seed: {e}")))?;
    let family = fields[3].to_string();

    let mut positions = domain_for(&family).canonical_positions(n);
    let mut edges = Vec::new();
    let mut in_positions = false;
    let mut read_positions = Vec::new();
    for (ln, line) in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line {
            "positions" => {
                in_positions = true;
                continue;
            }
            "edges" => {
                if read_positions.len() != n {
                    return Err(parse_err(
                        ln,
                        format!("expected {n} positions, got {}", read_positions.len()),
                    ));
                }
                positions = std::mem::take(&mut read_positions);
                in_positions = false;
                continue;
            }
            _ => {}
        }
        if in_positions {
            read_positions.push(
                line.parse::<f64>()
                    .map_err(|e| parse_err(ln, format!("position: {e}")))?,
            );
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(parse_err(ln, format!("expected `j k w`, got {line:?}")));
        }
        let j: usize = parts[0].parse().map_err(|e| parse_err(ln, format!("j: {e}")))?;
        let k: usize = parts[1].parse().map_err(|e| parse_err(ln, format!("k: {e}")))?;
        let w: i8 = parts[2].parse().map_err(|e| parse_err(ln, format!("w: {e}")))?;
        edges.push((j, k, w));
    }
    if in_positions {
        return Err(parse_err(0, "position block not terminated by `edges`".into()));
    }
    Network::from_edges(positions, edges, phi, seed, family)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphon::{sample_network, EdgeSplit, GraphonFamily, GraphonSpec};

    #[test]
    fn round_trip_canonical() {
        let spec = GraphonSpec::new(GraphonFamily::Constant { value: 0.5 }).unwrap();
        let net = sample_network(&spec, 40, 20.0, &EdgeSplit::FromKernel, 3).unwrap();
        let mut buf = Vec::new();
        write_network(&net, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("40 20 3 constant\n"));
        assert!(!text.contains("positions"));
        assert_eq!(read_network(buf.as_slice()).unwrap(), net);
    }

    #[test]
    fn round_trip_explicit_positions() {
        let net = Network::from_edges(vec![0.1, 0.7, 2.0], vec![(0, 2, 1), (2, 0, -1)], 1.5, 9, "constant").unwrap();
        let mut buf = Vec::new();
        write_network(&net, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("positions\n0.1\n0.7\n2\nedges\n"));
        assert_eq!(read_network(buf.as_slice()).unwrap(), net);
    }

    #[test]
    fn malformed_input_reports_line() {
        let err = read_network("3 1 0 constant\n0 1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(read_network("3 1 constant\n".as_bytes()).is_err());
    }
}
