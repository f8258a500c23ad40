//! On-disk formats: binary PPM/PGM images, Middlebury .flo flow files,
//! the weight container, and the sparse-Laplacian text dump.
//!
//! The weight container is fully validated on load and round-trips
//! bit-identically: magic "CAPW", u32 version, length-prefixed JSON
//! header (plan + tensor manifest), then a little-endian f32 payload.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matting::SparseLaplacian;
use crate::metrics::FlowField;
use crate::revnet::{
    ArchitecturePlan, BlockWeights, CrVariant, DenseParams, NetworkWeights, ResidualLayer,
};
use crate::tensor::{ConvParams, Tensor, KERNEL};

pub const WEIGHT_MAGIC: &[u8; 4] = b"CAPW";
pub const WEIGHT_VERSION: u32 = 1;
/// .flo sanity header: the bytes of "PIEH" read as a little-endian f32.
pub const FLO_MAGIC: f32 = 202021.25;

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

/// Reads one whitespace-delimited header token, skipping `#` comments.
fn next_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    while *pos < bytes.len() {
        let b = bytes[*pos];
        if b == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else if b.is_ascii_whitespace() {
            *pos += 1;
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if *pos > start {
        Some(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    } else {
        None
    }
}

fn parse_netpbm_header(
    bytes: &[u8],
    magic: &str,
    path: &Path,
) -> Result<(usize, usize, usize)> {
    let mut pos = 0usize;
    let tok = next_token(bytes, &mut pos)
        .ok_or_else(|| Error::format(path_str(path), "empty file"))?;
    if tok != magic {
        return Err(Error::format(
            path_str(path),
            format!("expected {magic}, found {tok:?}"),
        ));
    }
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        let t = next_token(bytes, &mut pos)
            .ok_or_else(|| Error::format(path_str(path), "truncated header"))?;
        *d = t
            .parse::<usize>()
            .map_err(|_| Error::format(path_str(path), format!("bad header field {t:?}")))?;
    }
    let [w, h, maxval] = dims;
    if w == 0 || h == 0 {
        return Err(Error::format(path_str(path), "zero image dimension"));
    }
    if maxval != 255 {
        return Err(Error::format(
            path_str(path),
            format!("maxval must be 255, found {maxval}"),
        ));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(path_str(path), "missing raster separator"));
    }
    Ok((h, w, pos + 1))
}

/// Binary PPM (P6, maxval 255) to a 3×H×W tensor on [0,1].
pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path_str(path), e))?;
    let (h, w, start) = parse_netpbm_header(&bytes, "P6", path)?;
    let need = 3 * h * w;
    let raster = &bytes[start..];
    if raster.len() != need {
        return Err(Error::format(
            path_str(path),
            format!("raster holds {} bytes, expected {need}", raster.len()),
        ));
    }
    let mut t = Tensor::zeros(3, h, w);
    for c in 0..3 {
        let plane = t.plane_mut(c);
        for (p, v) in plane.iter_mut().enumerate() {
            *v = raster[p * 3 + c] as f32 / 255.0;
        }
    }
    Ok(t)
}

/// Saves a 3-channel tensor as binary PPM; values clamp to [0,1] and
/// round to the nearest of 256 levels. This is the only place the
/// pipeline quantizes.
pub fn write_ppm(path: &Path, t: &Tensor) -> Result<()> {
    if t.channels() != 3 {
        return Err(Error::shape(
            "write_ppm",
            format!("expected 3 channels, got {}", t.channels()),
        ));
    }
    let (h, w) = (t.height(), t.width());
    let mut out = Vec::with_capacity(32 + 3 * h * w);
    write!(out, "P6\n{w} {h}\n255\n").expect("vec write");
    let planes = [t.plane(0), t.plane(1), t.plane(2)];
    for p in 0..h * w {
        for plane in planes {
            let v = (plane[p].clamp(0.0, 1.0) * 255.0).round() as u8;
            out.push(v);
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path_str(path), e))
}

/// 8-bit grayscale image (PGM P5): region labels or validity masks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn labels(&self) -> Vec<u32> {
        self.data.iter().map(|&v| v as u32).collect()
    }

    /// Validity convention: a pixel is valid iff its value is 255.
    pub fn valid_mask(&self) -> Vec<bool> {
        self.data.iter().map(|&v| v == 255).collect()
    }
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path_str(path), e))?;
    let (h, w, start) = parse_netpbm_header(&bytes, "P5", path)?;
    let raster = &bytes[start..];
    if raster.len() != h * w {
        return Err(Error::format(
            path_str(path),
            format!("raster holds {} bytes, expected {}", raster.len(), h * w),
        ));
    }
    Ok(GrayImage {
        height: h,
        width: w,
        data: raster.to_vec(),
    })
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    if img.data.len() != img.height * img.width {
        return Err(Error::shape("write_pgm", "data length mismatch".to_string()));
    }
    let mut out = Vec::with_capacity(32 + img.data.len());
    write!(out, "P5\n{} {}\n255\n", img.width, img.height).expect("vec write");
    out.extend_from_slice(&img.data);
    fs::write(path, out).map_err(|e| Error::io(path_str(path), e))
}

/// Quantizes a single-channel tensor (clamped to [0,1]) into a PGM.
pub fn write_pgm_f32(path: &Path, t: &Tensor) -> Result<()> {
    if t.channels() != 1 {
        return Err(Error::shape(
            "write_pgm",
            format!("expected 1 channel, got {}", t.channels()),
        ));
    }
    let data = t
        .plane(0)
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write_pgm(
        path,
        &GrayImage {
            height: t.height(),
            width: t.width(),
            data,
        },
    )
}

/// Middlebury .flo: magic f32, i32 width, i32 height, interleaved
/// little-endian (u, v) pairs in row-major order.
pub fn read_flo(path: &Path) -> Result<FlowField> {
    let bytes = fs::read(path).map_err(|e| Error::io(path_str(path), e))?;
    if bytes.len() < 12 {
        return Err(Error::format(path_str(path), "file shorter than header"));
    }
    let magic = f32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if magic != FLO_MAGIC {
        return Err(Error::format(
            path_str(path),
            format!("bad magic {magic}, expected {FLO_MAGIC}"),
        ));
    }
    let w = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let h = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if w <= 0 || h <= 0 || w > 32768 || h > 32768 {
        return Err(Error::format(
            path_str(path),
            format!("implausible dimensions {w}×{h}"),
        ));
    }
    let (w, h) = (w as usize, h as usize);
    let need = 12 + 8 * w * h;
    if bytes.len() != need {
        return Err(Error::format(
            path_str(path),
            format!("{} bytes, expected {need} for {w}×{h}", bytes.len()),
        ));
    }
    let mut u = Vec::with_capacity(w * h);
    let mut v = Vec::with_capacity(w * h);
    for p in 0..w * h {
        let off = 12 + 8 * p;
        u.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
        v.push(f32::from_le_bytes(
            bytes[off + 4..off + 8].try_into().unwrap(),
        ));
    }
    FlowField::new(h, w, u, v)
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    let (h, w) = (flow.height(), flow.width());
    let mut out = Vec::with_capacity(12 + 8 * h * w);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for p in 0..h * w {
        out.extend_from_slice(&flow.u()[p].to_le_bytes());
        out.extend_from_slice(&flow.v()[p].to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path_str(path), e))
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    /// Element offset into the f32 payload.
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct WeightHeader {
    plan: ArchitecturePlan,
    tensors: Vec<TensorRecord>,
}

struct LayerSpec {
    name: String,
    dense: bool,
    out_c: usize,
    in_c: usize,
}

/// Canonical tensor schedule for a plan: block-major, weight then bias.
fn layer_specs(plan: &ArchitecturePlan) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    for (i, (channels, variant)) in plan.block_schedule().into_iter().enumerate() {
        let half = channels / 2;
        for j in 0..plan.convs_per_block {
            let dense = variant == CrVariant::Pointwise;
            let kind = if dense { "dense" } else { "conv" };
            specs.push(LayerSpec {
                name: format!("block_{i:03}.{kind}_{j}"),
                dense,
                out_c: half,
                in_c: half,
            });
        }
    }
    specs
}

fn layer_tensors<'a>(layer: &'a ResidualLayer) -> (&'a [f32], &'a [f32]) {
    match layer {
        ResidualLayer::Conv(p) => (&p.weights, &p.bias),
        ResidualLayer::Dense(p) => (&p.weights, &p.bias),
    }
}

pub fn save_weights(path: &Path, w: &NetworkWeights) -> Result<()> {
    w.validate()?;
    let specs = layer_specs(&w.plan);
    let mut tensors = Vec::with_capacity(2 * specs.len());
    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0u64;
    let mut spec_it = specs.iter();
    for block in &w.blocks {
        for layer in &block.layers {
            let spec = spec_it.next().expect("schedule matches validated weights");
            let (weights, bias) = layer_tensors(layer);
            let wshape = if spec.dense {
                vec![spec.out_c, spec.in_c]
            } else {
                vec![spec.out_c, spec.in_c, KERNEL, KERNEL]
            };
            for (suffix, data, shape) in [
                ("weight", weights, wshape),
                ("bias", bias, vec![spec.out_c]),
            ] {
                tensors.push(TensorRecord {
                    name: format!("{}.{suffix}", spec.name),
                    shape,
                    offset,
                });
                for v in data {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
                offset += data.len() as u64;
            }
        }
    }
    let header = serde_json::to_vec(&WeightHeader {
        plan: w.plan.clone(),
        tensors,
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(12 + header.len() + payload.len());
    out.extend_from_slice(WEIGHT_MAGIC);
    out.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    fs::write(path, out).map_err(|e| Error::io(path_str(path), e))
}

pub fn load_weights(path: &Path) -> Result<NetworkWeights> {
    let bytes = fs::read(path).map_err(|e| Error::io(path_str(path), e))?;
    if bytes.len() < 12 {
        return Err(Error::format(path_str(path), "file shorter than header"));
    }
    if &bytes[0..4] != WEIGHT_MAGIC {
        return Err(Error::format(path_str(path), "bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != WEIGHT_VERSION {
        return Err(Error::format(
            path_str(path),
            format!("unsupported version {version}"),
        ));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + header_len {
        return Err(Error::format(path_str(path), "truncated header"));
    }
    let header: WeightHeader = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| Error::format(path_str(path), format!("header parse: {e}")))?;
    header
        .plan
        .validate()
        .map_err(|e| Error::format(path_str(path), format!("invalid plan: {e}")))?;

    let payload = &bytes[12 + header_len..];
    if payload.len() % 4 != 0 {
        return Err(Error::format(path_str(path), "payload not f32-aligned"));
    }
    let total_elems = payload.len() / 4;
    let read_span = |offset: u64, len: usize| -> Result<Vec<f32>> {
        let start = offset as usize;
        let end = start
            .checked_add(len)
            .ok_or_else(|| Error::format(path_str(path), "tensor span overflows"))?;
        if end > total_elems {
            return Err(Error::format(
                path_str(path),
                format!("tensor span {start}..{end} exceeds payload of {total_elems}"),
            ));
        }
        Ok((start..end)
            .map(|i| f32::from_le_bytes(payload[4 * i..4 * i + 4].try_into().unwrap()))
            .collect())
    };

    let specs = layer_specs(&header.plan);
    let mut expected_elems = 0usize;
    let mut blocks = Vec::new();
    let mut spec_idx = 0usize;
    let find = |name: &str| -> Result<&TensorRecord> {
        header
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::format(path_str(path), format!("missing tensor {name:?}")))
    };
    for _ in header.plan.block_schedule() {
        let mut layers = Vec::with_capacity(header.plan.convs_per_block);
        for _ in 0..header.plan.convs_per_block {
            let spec = &specs[spec_idx];
            spec_idx += 1;
            let wname = format!("{}.weight", spec.name);
            let bname = format!("{}.bias", spec.name);
            let wrec = find(&wname)?;
            let brec = find(&bname)?;
            let want_wshape = if spec.dense {
                vec![spec.out_c, spec.in_c]
            } else {
                vec![spec.out_c, spec.in_c, KERNEL, KERNEL]
            };
            if wrec.shape != want_wshape {
                return Err(Error::format(
                    path_str(path),
                    format!("{wname}: shape {:?}, expected {:?}", wrec.shape, want_wshape),
                ));
            }
            if brec.shape != vec![spec.out_c] {
                return Err(Error::format(
                    path_str(path),
                    format!("{bname}: shape {:?}, expected [{}]", brec.shape, spec.out_c),
                ));
            }
            let wlen: usize = want_wshape.iter().product();
            let weights = read_span(wrec.offset, wlen)?;
            let bias = read_span(brec.offset, spec.out_c)?;
            expected_elems += wlen + spec.out_c;
            let layer = if spec.dense {
                ResidualLayer::Dense(DenseParams {
                    out_channels: spec.out_c,
                    in_channels: spec.in_c,
                    weights,
                    bias,
                })
            } else {
                ResidualLayer::Conv(
                    ConvParams::new(spec.out_c, spec.in_c, weights, bias)
                        .map_err(|e| Error::format(path_str(path), format!("{wname}: {e}")))?,
                )
            };
            layers.push(layer);
        }
        blocks.push(BlockWeights { layers });
    }
    if header.tensors.len() != 2 * specs.len() {
        return Err(Error::format(
            path_str(path),
            format!(
                "manifest lists {} tensors, plan needs {}",
                header.tensors.len(),
                2 * specs.len()
            ),
        ));
    }
    if expected_elems != total_elems {
        return Err(Error::format(
            path_str(path),
            format!("payload holds {total_elems} elements, plan needs {expected_elems}"),
        ));
    }
    let weights = NetworkWeights {
        plan: header.plan,
        blocks,
    };
    weights
        .validate()
        .map_err(|e| Error::format(path_str(path), format!("inconsistent weights: {e}")))?;
    Ok(weights)
}

/// Writes "row col value" triplets, one per entry, in sorted order,
/// with 17 significant digits (lossless for f64).
pub fn write_laplacian_triplets(path: &Path, lap: &SparseLaplacian) -> Result<()> {
    let mut out = String::with_capacity(lap.nnz() * 32);
    for (r, c, v) in lap.entries() {
        out.push_str(&format!("{r} {c} {v:.16e}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path_str(path), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matting::build_laplacian;
    use crate::revnet::{init_weights, InitMode};
    use crate::tensor::{random_tensor, RngSeed, WeightRng};

    fn plan_small() -> ArchitecturePlan {
        ArchitecturePlan {
            initial_pad_channels: 8,
            scales: vec![2, 2],
            squeeze_factor: 2,
            convs_per_block: 2,
            cr: crate::revnet::ChannelRefinePlan {
                target_channels: 8,
                spread_factor: 2,
                block_count: 1,
                variant: CrVariant::ConvBlocks,
            },
            loss_weights: Default::default(),
        }
    }

    #[test]
    fn ppm_round_trip_with_comments() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.ppm");
        // Hand-build a file with header comments.
        let mut bytes = b"P6\n# test card\n2 2\n# maxval next\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 0, 0, 255, 0, 0, 0, 255, 0, 255, 255, 255]);
        std::fs::write(&p, &bytes).unwrap();
        let t = read_ppm(&p).unwrap();
        assert_eq!(t.shape(), (3, 2, 2));
        assert_eq!(t.at(0, 0, 1), 1.0);
        assert_eq!(t.at(1, 1, 0), 1.0);
        assert_eq!(t.at(2, 1, 1), 1.0);
        assert_eq!(t.at(1, 0, 1), 0.0);

        let q = dir.path().join("out.ppm");
        write_ppm(&q, &t).unwrap();
        let t2 = read_ppm(&q).unwrap();
        assert_eq!(t.data(), t2.data());
    }

    #[test]
    fn ppm_quantization_rounds() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.ppm");
        let mut t = Tensor::zeros(3, 1, 2);
        t.set(0, 0, 0, 0.4999); // → 127
        t.set(0, 0, 1, 1.7); // clamps to 255
        t.set(1, 0, 0, -0.3); // clamps to 0
        t.set(2, 0, 1, 128.4 / 255.0); // → 128
        write_ppm(&p, &t).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let raster = &bytes[bytes.len() - 6..];
        assert_eq!(raster[0], 127);
        assert_eq!(raster[1], 0);
        assert_eq!(raster[3], 255);
        assert_eq!(raster[5], 128);
    }

    #[test]
    fn ppm_rejects_malformed() {
        let dir = tempfile::tempdir().unwrap();
        for (name, content) in [
            ("bad_magic.ppm", b"P5\n2 2\n255\n0000".to_vec()),
            ("bad_maxval.ppm", {
                let mut v = b"P6\n2 2\n65535\n".to_vec();
                v.extend_from_slice(&[0; 24]);
                v
            }),
            ("short.ppm", {
                let mut v = b"P6\n2 2\n255\n".to_vec();
                v.extend_from_slice(&[0; 7]);
                v
            }),
        ] {
            let p = dir.path().join(name);
            std::fs::write(&p, &content).unwrap();
            assert!(read_ppm(&p).is_err(), "{name} should fail");
        }
    }

    #[test]
    fn pgm_round_trip_and_masks() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        let img = GrayImage {
            height: 2,
            width: 3,
            data: vec![0, 255, 7, 255, 254, 1],
        };
        write_pgm(&p, &img).unwrap();
        let back = read_pgm(&p).unwrap();
        assert_eq!(back, img);
        assert_eq!(
            back.valid_mask(),
            vec![false, true, false, true, false, false]
        );
        assert_eq!(back.labels(), vec![0, 255, 7, 255, 254, 1]);
    }

    #[test]
    fn flo_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.flo");
        let u: Vec<f32> = (0..6).map(|i| i as f32 * 0.5 - 1.0).collect();
        let v: Vec<f32> = (0..6).map(|i| -(i as f32)).collect();
        let flow = FlowField::new(2, 3, u.clone(), v.clone()).unwrap();
        write_flo(&p, &flow).unwrap();
        let back = read_flo(&p).unwrap();
        assert_eq!(back.height(), 2);
        assert_eq!(back.width(), 3);
        assert_eq!(back.u(), &u[..]);
        assert_eq!(back.v(), &v[..]);

        let q = dir.path().join("bad.flo");
        std::fs::write(&q, [0u8; 12]).unwrap();
        assert!(read_flo(&q).is_err());
    }

    #[test]
    fn weights_round_trip_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.capw");
        let w = init_weights(&plan_small(), RngSeed(7), InitMode::Random).unwrap();
        save_weights(&p, &w).unwrap();
        let back = load_weights(&p).unwrap();
        assert_eq!(w, back);
        // Second save must produce identical bytes.
        let q = dir.path().join("w2.capw");
        save_weights(&q, &back).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    }

    #[test]
    fn weights_pointwise_variant_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.capw");
        let mut plan = plan_small();
        plan.cr.variant = CrVariant::Pointwise;
        let w = init_weights(&plan, RngSeed(8), InitMode::ZeroResidual).unwrap();
        save_weights(&p, &w).unwrap();
        let back = load_weights(&p).unwrap();
        assert_eq!(w, back);
    }

    #[test]
    fn weights_reject_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.capw");
        let w = init_weights(&plan_small(), RngSeed(9), InitMode::Random).unwrap();
        save_weights(&p, &w).unwrap();
        let good = std::fs::read(&p).unwrap();

        // Bad magic.
        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&p, &bad).unwrap();
        assert!(load_weights(&p).is_err());

        // Bad version.
        let mut bad = good.clone();
        bad[4] = 99;
        std::fs::write(&p, &bad).unwrap();
        assert!(load_weights(&p).is_err());

        // Truncated payload.
        let bad = good[..good.len() - 5].to_vec();
        std::fs::write(&p, &bad).unwrap();
        assert!(load_weights(&p).is_err());

        // Corrupted header JSON.
        let mut bad = good.clone();
        bad[16] = b'}';
        std::fs::write(&p, &bad).unwrap();
        assert!(load_weights(&p).is_err());
    }

    #[test]
    fn laplacian_dump_format() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lap.txt");
        let mut rng = WeightRng::new(RngSeed(10));
        let img = random_tensor(3, 4, 4, &mut rng, 0.0, 1.0);
        let lap = build_laplacian(&img, 1, 1e-7).unwrap();
        write_laplacian_triplets(&p, &lap).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), lap.nnz());
        // Every value re-parses to the exact stored f64.
        for (line, (r, c, v)) in lines.iter().zip(lap.entries()) {
            let mut parts = line.split_whitespace();
            assert_eq!(parts.next().unwrap().parse::<u32>().unwrap(), r);
            assert_eq!(parts.next().unwrap().parse::<u32>().unwrap(), c);
            let parsed: f64 = parts.next().unwrap().parse().unwrap();
            assert_eq!(parsed, v, "17 significant digits must round-trip");
            assert!(parts.next().is_none());
        }
    }
}
