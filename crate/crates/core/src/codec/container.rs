//! GVC1 container: little-endian header followed by one tagged payload per
//! frame.
//!
//! ```text
//! "GVC1" | u32 width | u32 height | u32 frame_count | u32 gop_size
//! u8 label_present | [u16 label]
//! per frame: u8 type (0 = I, 1 = P)
//!   I: width*height*3 u8 RGB
//!   P: blocks_y*blocks_x (i16 dx, i16 dy) | width*height*3 i16 residual
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{
    blocks_for, CodecError, CodedFrame, Frame, GopVideo, MotionField, MotionVector, Residual,
    Result, MAX_SEARCH_RANGE,
};

pub const GVC_MAGIC: &[u8; 4] = b"GVC1";

const TYPE_INTRA: u8 = 0;
const TYPE_PREDICTED: u8 = 1;

pub fn write_gvc<W: Write>(video: &GopVideo, mut out: W) -> Result<()> {
    video.validate()?;
    let mut buf = Vec::with_capacity(64 + video.frames.len() * video.width * video.height * 6);
    buf.extend_from_slice(GVC_MAGIC);
    for v in [video.width, video.height, video.frames.len(), video.gop_size] {
        let v = u32::try_from(v).map_err(|_| CodecError::Malformed("header field overflow".into()))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    match video.label {
        Some(label) => {
            buf.push(1);
            buf.extend_from_slice(&label.to_le_bytes());
        }
        None => buf.push(0),
    }
    for frame in &video.frames {
        match frame {
            CodedFrame::Intra(f) => {
                buf.push(TYPE_INTRA);
                buf.extend_from_slice(&f.data);
            }
            CodedFrame::Predicted { motion, residual } => {
                buf.push(TYPE_PREDICTED);
                for v in &motion.vectors {
                    buf.extend_from_slice(&v.dx.to_le_bytes());
                    buf.extend_from_slice(&v.dy.to_le_bytes());
                }
                for r in &residual.data {
                    buf.extend_from_slice(&r.to_le_bytes());
                }
            }
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(CodecError::Truncated(format!(
                "{what}: need {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parses a complete GVC1 byte buffer.
pub fn read_gvc(bytes: &[u8]) -> Result<GopVideo> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != GVC_MAGIC {
        return Err(CodecError::Malformed("bad magic".into()));
    }
    let width = cur.u32("width")? as usize;
    let height = cur.u32("height")? as usize;
    let frame_count = cur.u32("frame_count")? as usize;
    let gop_size = cur.u32("gop_size")? as usize;
    if width == 0 || height == 0 {
        return Err(CodecError::Malformed(format!("zero extent {width}x{height}")));
    }
    if gop_size == 0 {
        return Err(CodecError::InvalidGopSize);
    }
    let label = match cur.u8("label flag")? {
        0 => None,
        1 => Some(cur.u16("label")?),
        other => return Err(CodecError::Malformed(format!("label flag {other}"))),
    };
    let samples = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(3))
        .ok_or_else(|| CodecError::Malformed("frame size overflow".into()))?;
    let (bx, by) = (blocks_for(width), blocks_for(height));
    let mut frames = Vec::with_capacity(frame_count.min(4096));
    for k in 0..frame_count {
        match cur.u8("frame type")? {
            TYPE_INTRA => {
                let data = cur.take(samples, "intra payload")?.to_vec();
                frames.push(CodedFrame::Intra(Frame::new(width, height, data)?));
            }
            TYPE_PREDICTED => {
                let raw = cur.take(bx * by * 4, "motion payload")?;
                let vectors = raw
                    .chunks_exact(4)
                    .map(|c| {
                        MotionVector::new(
                            i16::from_le_bytes([c[0], c[1]]),
                            i16::from_le_bytes([c[2], c[3]]),
                        )
                    })
                    .collect();
                let raw = cur.take(samples * 2, "residual payload")?;
                let data = raw
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]))
                    .collect();
                frames.push(CodedFrame::Predicted {
                    motion: MotionField {
                        blocks_x: bx,
                        blocks_y: by,
                        search_range: MAX_SEARCH_RANGE,
                        vectors,
                    },
                    residual: Residual {
                        width,
                        height,
                        data,
                    },
                });
            }
            other => {
                return Err(CodecError::Malformed(format!("frame {k}: unknown type {other}")))
            }
        }
    }
    if cur.pos != bytes.len() {
        return Err(CodecError::Malformed(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    let video = GopVideo {
        width,
        height,
        gop_size,
        label,
        frames,
    };
    video.validate()?;
    Ok(video)
}

pub fn write_gvc_file(video: &GopVideo, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_gvc(video, std::io::BufWriter::new(file))
}

pub fn read_gvc_file(path: impl AsRef<Path>) -> Result<GopVideo> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    read_gvc(&bytes)
}
