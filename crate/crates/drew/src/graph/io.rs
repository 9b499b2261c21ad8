//! Edge-list text files and the binary hop-index cache.
//!
//! Edge-list format: UTF-8 text, first line `n m`, then `m` lines `u v`
//! with 0-indexed whitespace-separated endpoints.
//!
//! Cache format: little-endian binary with a magic/version header so stale
//! caches are rejected rather than misread.

use super::{Graph, GraphError, HopIndex};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Parses an edge list from a reader.
pub fn read_edge_list<R: Read>(reader: R) -> Result<Graph, GraphError> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines
        .next()
        .ok_or_else(|| GraphError::Parse("empty file".into()))??;
    let mut it = header.split_whitespace();
    let n: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| GraphError::Parse("header must be `n m`".into()))?;
    let m: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| GraphError::Parse("header must be `n m`".into()))?;
    if it.next().is_some() {
        return Err(GraphError::Parse("header must be `n m`".into()));
    }

    let mut edges = Vec::with_capacity(m);
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let u: u32 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| GraphError::Parse(format!("bad edge on line {}", lineno + 2)))?;
        let v: u32 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| GraphError::Parse(format!("bad edge on line {}", lineno + 2)))?;
        if it.next().is_some() {
            return Err(GraphError::Parse(format!(
                "trailing tokens on line {}",
                lineno + 2
            )));
        }
        edges.push((u, v));
    }
    if edges.len() != m {
        return Err(GraphError::Parse(format!(
            "header declares {m} edges, found {}",
            edges.len()
        )));
    }
    Graph::build(&edges, n)
}

pub fn load_edge_list(path: &Path) -> Result<Graph, GraphError> {
    read_edge_list(std::fs::File::open(path)?)
}

/// Writes a graph in edge-list format.
pub fn write_edge_list<W: Write>(g: &Graph, writer: W) -> Result<(), GraphError> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "{} {}", g.node_count(), g.edge_count())?;
    for &(u, v) in g.edges() {
        writeln!(w, "{u} {v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_edge_list(g: &Graph, path: &Path) -> Result<(), GraphError> {
    write_edge_list(g, std::fs::File::create(path)?)
}

const CACHE_MAGIC: &[u8; 4] = b"DRHI";
const CACHE_VERSION: u16 = 1;

/// Serializes a hop index into the versioned binary cache format.
pub fn write_hop_cache<W: Write>(hi: &HopIndex, writer: W) -> Result<(), GraphError> {
    let mut w = BufWriter::new(writer);
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&(hi.node_count() as u32).to_le_bytes())?;
    w.write_all(&(hi.k_max() as u32).to_le_bytes())?;
    for i in 0..hi.node_count() as u32 {
        for k in 1..=hi.k_max() {
            let shell = hi.shell(i, k);
            w.write_all(&(shell.len() as u32).to_le_bytes())?;
            for &j in shell {
                w.write_all(&j.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_hop_cache(hi: &HopIndex, path: &Path) -> Result<(), GraphError> {
    write_hop_cache(hi, std::fs::File::create(path)?)
}

/// Deserializes a hop index written by [`write_hop_cache`].
pub fn read_hop_cache<R: Read>(reader: R) -> Result<HopIndex, GraphError> {
    let mut r = BufReader::new(reader);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(GraphError::Cache("bad magic".into()));
    }
    let version = read_u16(&mut r)?;
    if version != CACHE_VERSION {
        return Err(GraphError::Cache(format!(
            "unsupported cache version {version}"
        )));
    }
    let n = read_u32(&mut r)? as usize;
    let k_max = read_u32(&mut r)? as usize;
    if k_max == 0 {
        return Err(GraphError::Cache("k_max must be positive".into()));
    }
    let mut shells = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = Vec::with_capacity(k_max);
        for _ in 0..k_max {
            let len = read_u32(&mut r)? as usize;
            if len > n {
                return Err(GraphError::Cache("shell length exceeds node count".into()));
            }
            let mut shell = Vec::with_capacity(len);
            for _ in 0..len {
                let j = read_u32(&mut r)?;
                if j as usize >= n {
                    return Err(GraphError::Cache("shell member out of range".into()));
                }
                shell.push(j);
            }
            row.push(shell);
        }
        shells.push(row);
    }
    Ok(HopIndex::from_parts(n, k_max, shells))
}

pub fn load_hop_cache(path: &Path) -> Result<HopIndex, GraphError> {
    read_hop_cache(std::fs::File::open(path)?)
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16, GraphError> {
    let mut buf = [0u8; 2];
    r.read_exact(&mut buf)?;
    Ok(u16::from_le_bytes(buf))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, GraphError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{compute_hop_index, gen};

    #[test]
    fn edge_list_round_trip() {
        let g = gen::erdos_renyi_connectedish(15, 0.3, 3);
        let mut buf = Vec::new();
        write_edge_list(&g, &mut buf).unwrap();
        let back = read_edge_list(buf.as_slice()).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn edge_list_rejects_bad_header() {
        assert!(matches!(
            read_edge_list("nope\n".as_bytes()),
            Err(GraphError::Parse(_))
        ));
        assert!(matches!(
            read_edge_list("3 2\n0 1\n".as_bytes()),
            Err(GraphError::Parse(_))
        ));
    }

    #[test]
    fn hop_cache_round_trip() {
        let g = gen::disjoint_union(&gen::cycle(7), &gen::path(3));
        let hi = compute_hop_index(&g, 4);
        let mut buf = Vec::new();
        write_hop_cache(&hi, &mut buf).unwrap();
        let back = read_hop_cache(buf.as_slice()).unwrap();
        assert_eq!(hi, back);
    }

    #[test]
    fn hop_cache_rejects_wrong_magic() {
        let err = read_hop_cache(&b"XXXX\x01\x00"[..]).unwrap_err();
        assert!(matches!(err, GraphError::Cache(_)));
    }
}
