//! Binary dataset container (little-endian):
//!
//! ```text
//! "MM23" | version u32 | sample count u32
//! per sample:
//!   H u32 | W u32 | image f32[3·H·W]
//!   N u32 | positions f32[N·3] | colors f32[N·3] | labels i32[N]
//!   intrinsics f32[6] (fx, fy, cx, cy, width, height) | domain u8 (0 source, 1 target)
//! ```
//!
//! Missing colors are written as zeros and missing labels as −1, so a loaded
//! sample always carries both.

use std::path::Path;

use super::{Dataset, Domain, Sample};
use crate::codec::{read_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, PointCloud, IGNORE_LABEL};
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 4] = b"MM23";
pub const DATASET_VERSION: u32 = 1;

pub fn encode(dataset: &Dataset) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.bytes(DATASET_MAGIC);
    w.u32(DATASET_VERSION);
    w.len_u32(dataset.samples.len())?;
    for s in &dataset.samples {
        let k = &s.intrinsics;
        if s.image.shape() != [3, k.height, k.width] {
            return Err(Error::dim(format!(
                "image {:?} disagrees with intrinsics {}x{}",
                s.image.shape(),
                k.height,
                k.width
            )));
        }
        w.len_u32(k.height)?;
        w.len_u32(k.width)?;
        w.f32s(s.image.data().iter().copied());
        let n = s.cloud.len();
        w.len_u32(n)?;
        w.f32s(s.cloud.positions.iter().flatten().copied());
        match &s.cloud.colors {
            Some(c) if c.len() == n => w.f32s(c.iter().flatten().copied()),
            Some(_) => return Err(Error::dim("colors do not match point count")),
            None => w.f32s(std::iter::repeat_n(0.0, 3 * n)),
        }
        match &s.cloud.labels {
            Some(l) if l.len() == n => w.i32s(l.iter().copied()),
            Some(_) => return Err(Error::dim("labels do not match point count")),
            None => w.i32s(std::iter::repeat_n(IGNORE_LABEL, n)),
        }
        w.f32s([k.fx, k.fy, k.cx, k.cy, k.width as f32, k.height as f32]);
        w.u8(match s.domain {
            Domain::Source => 0,
            Domain::Target => 1,
        });
    }
    Ok(w.buf)
}

fn triples(v: Vec<f32>) -> Vec<[f32; 3]> {
    v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

pub fn decode(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    r.header(DATASET_MAGIC, DATASET_VERSION)?;
    let count = r.u32()? as usize;
    let mut samples = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let h = r.u32()? as usize;
        let w = r.u32()? as usize;
        let plane = h
            .checked_mul(w)
            .and_then(|p| p.checked_mul(3))
            .ok_or_else(|| r.format("image size overflow"))?;
        let image = Tensor::new(&[3, h, w], r.f32s(plane)?)?;
        let n = r.count(28)?;
        let positions = triples(r.f32s(3 * n)?);
        let colors = triples(r.f32s(3 * n)?);
        let labels = r.i32s(n)?;
        let at = r.offset();
        let kv = r.f32s(6)?;
        if kv[4] != w as f32 || kv[5] != h as f32 {
            return Err(Error::Format {
                offset: at,
                msg: format!("intrinsics size {}x{} disagrees with image {w}x{h}", kv[4], kv[5]),
            });
        }
        let intrinsics = Intrinsics {
            fx: kv[0],
            fy: kv[1],
            cx: kv[2],
            cy: kv[3],
            width: w,
            height: h,
        };
        let domain = match r.u8()? {
            0 => Domain::Source,
            1 => Domain::Target,
            d => return Err(r.format(format!("unknown domain tag {d}"))),
        };
        samples.push(Sample {
            image,
            cloud: PointCloud {
                positions,
                colors: Some(colors),
                labels: Some(labels),
            },
            intrinsics,
            domain,
        });
    }
    if !r.at_end() {
        return Err(r.format("trailing bytes after last sample"));
    }
    Ok(Dataset { samples })
}

pub fn save(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode(dataset)?;
    crate::codec::Writer { buf: bytes }.write_to(path.as_ref())
}

pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
    decode(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate, SceneSpec};

    #[test]
    fn round_trip_is_bit_exact() {
        let mut ds = generate(&SceneSpec::day(3), 2).unwrap();
        ds.samples.extend(generate(&SceneSpec::night(4), 1).unwrap().samples);
        let bytes = encode(&ds).unwrap();
        let back = decode(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn corrupted_magic() {
        let ds = generate(&SceneSpec::day(3), 1).unwrap();
        let mut bytes = encode(&ds).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn wrong_version() {
        let ds = generate(&SceneSpec::day(3), 1).unwrap();
        let mut bytes = encode(&ds).unwrap();
        bytes[4] = 9;
        assert!(matches!(decode(&bytes), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn truncated_payload() {
        let ds = generate(&SceneSpec::day(3), 1).unwrap();
        let bytes = encode(&ds).unwrap();
        for cut in [10, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(decode(&bytes[..cut]), Err(Error::Truncated { .. })),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn header_declaring_more_points_than_payload() {
        let ds = generate(&SceneSpec::day(3), 1).unwrap();
        let mut bytes = encode(&ds).unwrap();
        let s = &ds.samples[0];
        let n_at = 12 + 8 + 4 * s.image.len();
        let declared = (s.num_points() as u32 + 1000).to_le_bytes();
        bytes[n_at..n_at + 4].copy_from_slice(&declared);
        assert!(matches!(decode(&bytes), Err(Error::Truncated { .. })));
    }
}
