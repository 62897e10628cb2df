//! History container: a line-oriented text header followed by raw
//! little-endian `f64` arrays.
//!
//! ```text
//! RICCILAB-HISTORY v1
//! backend,conformal-torus
//! mesh,grid,2,64,6.283185307179586        (or: mesh,sphere,<degree>)
//! slices,<count>,<flat|round|conformal>
//! times,<t_0>,<t_1>,...
//! kernels,<count>
//! kernel,<basepoint>,<base_time>,<dim>,<epsilon0>,<origin>,<samples>,<channels 0|1>
//! kernel-times,<s_0>,<s_1>,...
//! data
//! ```
//!
//! The `kernel` and `kernel-times` lines repeat once per kernel. After the
//! `data` line come, in order: one value per slice for `round` (the radius)
//! or one value per node for `conformal` (the factor `u`), nothing for
//! `flat`; then for every kernel sample the density and, with channels,
//! the potential, gradient (`dim` per node) and Hessian (`dim²` per node).
//! Numbers in the header use the shortest round-trip decimal form, so a
//! write/read cycle is bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{LabError, Result};
use crate::flow::FlowHistory;
use crate::geometry::{Backend, GridMesh, Mesh, MetricSlice, Payload, SphereMesh};
use crate::heatkernel::{Channels, KernelHistory, KernelOrigin, KernelSample};

pub const MAGIC: &str = "RICCILAB-HISTORY v1";

fn origin_name(o: KernelOrigin) -> &'static str {
    match o {
        KernelOrigin::Solved => "solved",
        KernelOrigin::ImageSum => "image-sum",
        KernelOrigin::Series => "series",
    }
}

fn parse_origin(s: &str) -> Result<KernelOrigin> {
    match s {
        "solved" => Ok(KernelOrigin::Solved),
        "image-sum" => Ok(KernelOrigin::ImageSum),
        "series" => Ok(KernelOrigin::Series),
        other => Err(LabError::Format(format!("unknown kernel origin {other:?}"))),
    }
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
}

fn put(out: &mut impl Write, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 * values.len());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn write_history(out: &mut impl Write, flow: &FlowHistory, kernels: &[KernelHistory]) -> Result<()> {
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "backend,{}", flow.backend().name())?;
    match flow.mesh() {
        Mesh::Grid(g) => writeln!(out, "mesh,grid,{},{},{:?}", g.dim(), g.res(), g.side())?,
        Mesh::Sphere(s) => writeln!(out, "mesh,sphere,{}", s.degree())?,
    }
    let kind = match flow.slices()[0].payload {
        Payload::Flat => "flat",
        Payload::Round { .. } => "round",
        Payload::Conformal(_) => "conformal",
    };
    writeln!(out, "slices,{},{kind}", flow.len())?;
    writeln!(out, "times,{}", join(flow.times()))?;
    writeln!(out, "kernels,{}", kernels.len())?;
    for k in kernels {
        let channels = k.samples.iter().all(|s| s.channels.is_some()) && !k.samples.is_empty();
        writeln!(
            out,
            "kernel,{},{:?},{},{:?},{},{},{}",
            k.basepoint,
            k.base_time,
            k.dim,
            k.epsilon0,
            origin_name(k.origin),
            k.samples.len(),
            u8::from(channels)
        )?;
        writeln!(out, "kernel-times,{}", join(k.times()))?;
    }
    writeln!(out, "data")?;
    for slice in flow.slices() {
        match &slice.payload {
            Payload::Flat => {}
            Payload::Round { radius } => put(out, &[*radius])?,
            Payload::Conformal(u) => put(out, u)?,
        }
    }
    for k in kernels {
        let channels = k.samples.iter().all(|s| s.channels.is_some());
        for smp in &k.samples {
            put(out, &smp.density)?;
            if let (true, Some(c)) = (channels, &smp.channels) {
                put(out, &c.potential)?;
                put(out, &c.gradient)?;
                put(out, &c.hessian)?;
            }
        }
    }
    Ok(())
}

struct Header<'a> {
    line: usize,
    fields: Vec<&'a str>,
}

impl<'a> Header<'a> {
    fn new(line: usize, text: &'a str, key: &str) -> Result<Self> {
        let fields: Vec<&str> = text.split(',').collect();
        if fields[0] != key {
            return Err(LabError::Format(format!("line {line}: expected {key:?}, found {text:?}")));
        }
        Ok(Self { line, fields })
    }

    fn get<T: std::str::FromStr>(&self, i: usize) -> Result<T> {
        self.fields
            .get(i)
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| LabError::Format(format!("line {}: bad field {i} in {:?}", self.line, self.fields.join(","))))
    }

    fn floats(&self) -> Result<Vec<f64>> {
        (1..self.fields.len()).map(|i| self.get(i)).collect()
    }
}

fn take(input: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; 8 * n];
    input
        .read_exact(&mut buf)
        .map_err(|e| LabError::Format(format!("payload truncated: {e}")))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
        .collect())
}

pub fn read_history(input: &mut impl BufRead) -> Result<(FlowHistory, Vec<KernelHistory>)> {
    let mut lines = Vec::new();
    loop {
        let mut line = String::new();
        if input.read_line(&mut line)? == 0 {
            return Err(LabError::Format("header ends before the data line".into()));
        }
        let line = line.trim_end_matches(['\n', '\r']).to_string();
        if line == "data" {
            break;
        }
        lines.push(line);
    }
    if lines.first().map(String::as_str) != Some(MAGIC) {
        return Err(LabError::Format(format!("missing {MAGIC:?} header")));
    }
    let mut at = 1;
    let mut next = |key: &str| -> Result<(usize, String)> {
        let text = lines
            .get(at)
            .cloned()
            .ok_or_else(|| LabError::Format(format!("header ends before {key:?}")))?;
        at += 1;
        Ok((at, text))
    };
    let (n, text) = next("backend")?;
    let h = Header::new(n, &text, "backend")?;
    let backend = Backend::parse(h.fields.get(1).copied().unwrap_or(""))
        .ok_or_else(|| LabError::Format(format!("line {n}: unknown backend")))?;
    let (n, text) = next("mesh")?;
    let h = Header::new(n, &text, "mesh")?;
    let mesh = match h.fields.get(1).copied() {
        Some("grid") => Mesh::Grid(GridMesh::new(h.get(2)?, h.get(3)?, h.get(4)?)?),
        Some("sphere") => Mesh::Sphere(SphereMesh::new(h.get(2)?)?),
        _ => return Err(LabError::Format(format!("line {n}: unknown mesh"))),
    };
    let (n, text) = next("slices")?;
    let h = Header::new(n, &text, "slices")?;
    let count: usize = h.get(1)?;
    let kind: String = h.get(2)?;
    let (n, text) = next("times")?;
    let times = Header::new(n, &text, "times")?.floats()?;
    if times.len() != count {
        return Err(LabError::Format(format!("line {n}: {} times for {count} slices", times.len())));
    }
    let (n, text) = next("kernels")?;
    let kernel_count: usize = Header::new(n, &text, "kernels")?.get(1)?;
    let mut specs = Vec::with_capacity(kernel_count);
    for _ in 0..kernel_count {
        let (n, text) = next("kernel")?;
        let h = Header::new(n, &text, "kernel")?;
        let spec: (usize, f64, usize, f64, KernelOrigin, usize, bool) = (
            h.get(1)?,
            h.get(2)?,
            h.get(3)?,
            h.get(4)?,
            parse_origin(h.fields.get(5).copied().unwrap_or(""))?,
            h.get(6)?,
            h.get::<u8>(7)? == 1,
        );
        let (n, text) = next("kernel-times")?;
        let s = Header::new(n, &text, "kernel-times")?.floats()?;
        if s.len() != spec.5 {
            return Err(LabError::Format(format!("line {n}: {} times for {} samples", s.len(), spec.5)));
        }
        specs.push((spec, s));
    }
    let len = mesh.len();
    let slices = times
        .iter()
        .map(|&t| match kind.as_str() {
            "flat" => Ok(MetricSlice::flat(t)),
            "round" => MetricSlice::round(t, take(input, 1)?[0]),
            "conformal" => MetricSlice::conformal(t, take(input, len)?),
            other => Err(LabError::Format(format!("unknown slice payload {other:?}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let flow = FlowHistory::from_parts(mesh, backend, slices)?;
    let mut kernels = Vec::with_capacity(specs.len());
    for ((basepoint, base_time, dim, epsilon0, origin, _, channels), s) in specs {
        let samples = s
            .into_iter()
            .map(|s| {
                let density = take(input, len)?;
                let channels = if channels {
                    Some(Channels {
                        potential: take(input, len)?,
                        gradient: take(input, len * dim)?,
                        hessian: take(input, len * dim * dim)?,
                    })
                } else {
                    None
                };
                Ok(KernelSample { s, density, channels })
            })
            .collect::<Result<Vec<_>>>()?;
        kernels.push(KernelHistory {
            basepoint,
            base_time,
            dim,
            epsilon0,
            origin,
            samples,
        });
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(LabError::Format("trailing bytes after the payload".into()));
    }
    Ok((flow, kernels))
}

pub fn save_history(path: &Path, flow: &FlowHistory, kernels: &[KernelHistory]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_history(&mut out, flow, kernels)?;
    out.flush()?;
    Ok(())
}

pub fn load_history(path: &Path) -> Result<(FlowHistory, Vec<KernelHistory>)> {
    read_history(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{evolve_conformal_torus, make_shrinking_sphere};
    use crate::heatkernel::{series_kernel, solve_conjugate_kernel, KernelOptions};

    fn round_trip(flow: &FlowHistory, kernels: &[KernelHistory]) -> (FlowHistory, Vec<KernelHistory>) {
        let mut bytes = Vec::new();
        write_history(&mut bytes, flow, kernels).unwrap();
        read_history(&mut bytes.as_slice()).unwrap()
    }

    #[test]
    fn conformal_round_trip_is_exact() {
        let mesh = GridMesh::new(2, 12, 5.0).unwrap();
        let u0: Vec<f64> = (0..mesh.len()).map(|i| 0.1 * (i as f64).sin()).collect();
        let flow = evolve_conformal_torus(&mesh, &u0, 0.5, &Default::default()).unwrap();
        let k = solve_conjugate_kernel(&flow, 7, &KernelOptions::default()).unwrap();
        let (f2, k2) = round_trip(&flow, &[k.clone()]);
        assert_eq!(f2, flow);
        assert_eq!(k2, vec![k]);
    }

    #[test]
    fn sphere_channels_round_trip() {
        let flow = make_shrinking_sphere(2.0, 0.5, 16, 4).unwrap();
        let k = series_kernel(&flow, 0.0, &[-0.3, -0.1]).unwrap();
        assert!(k.samples[0].channels.is_some());
        let (f2, k2) = round_trip(&flow, &[k.clone()]);
        assert_eq!(f2, flow);
        assert_eq!(k2, vec![k]);
    }

    #[test]
    fn truncation_is_reported() {
        let flow = make_shrinking_sphere(2.0, 0.5, 8, 4).unwrap();
        let mut bytes = Vec::new();
        write_history(&mut bytes, &flow, &[]).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(read_history(&mut bytes.as_slice()), Err(LabError::Format(_))));
    }
}
