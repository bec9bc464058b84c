use super::color::rgb_to_ycbcr;
use super::dct;
use super::huffman::{encode_block, BitWriter, Encoder};
use super::tables::{scaled_table, HuffmanSpec, AC_CHROMA, AC_LUMA, CHROMA_QUANT, DC_CHROMA, DC_LUMA, LUMA_QUANT, ZIGZAG};
use super::JpegError;
use crate::image::Image;

/// A sample plane padded to whole blocks.
struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    fn block(&self, bx: usize, by: usize) -> [f64; 64] {
        std::array::from_fn(|i| self.data[(by * 8 + i / 8) * self.width + bx * 8 + i % 8] - 128.0)
    }
}

fn round_half_away(v: f64) -> i32 {
    v.round() as i32
}

fn quantize(block: &[f64; 64], table: &[u16; 64]) -> [i32; 64] {
    let coef = dct::forward(block);
    std::array::from_fn(|i| round_half_away(coef[i] / table[i] as f64))
}

fn segment(out: &mut Vec<u8>, marker: u8, payload: &[u8]) {
    out.extend_from_slice(&[0xff, marker]);
    out.extend_from_slice(&((payload.len() + 2) as u16).to_be_bytes());
    out.extend_from_slice(payload);
}

fn dqt(out: &mut Vec<u8>, id: u8, table: &[u16; 64]) {
    let mut p = vec![id];
    p.extend(ZIGZAG.iter().map(|&n| table[n] as u8));
    segment(out, 0xdb, &p);
}

fn dht(out: &mut Vec<u8>, class: u8, id: u8, spec: &HuffmanSpec) {
    let mut p = vec![class << 4 | id];
    p.extend_from_slice(&spec.bits);
    p.extend_from_slice(spec.values);
    segment(out, 0xc4, &p);
}

/// Baseline JFIF encoder: 4:2:0 for colour input, single component for gray.
pub fn encode(img: &Image, quality: u8) -> Result<Vec<u8>, JpegError> {
    if !(1..=100).contains(&quality) {
        return Err(JpegError::Quality(quality as i64));
    }
    let (w, h) = (img.width(), img.height());
    if w > 65535 || h > 65535 {
        return Err(JpegError::Unsupported {
            segment: "SOF0",
            reason: format!("{w}x{h} exceeds 16-bit frame extents"),
        });
    }
    let color = img.channels() == 3;
    let mcu = if color { 16 } else { 8 };
    let (pw, ph) = (w.div_ceil(mcu) * mcu, h.div_ceil(mcu) * mcu);

    // edge-replicated full-resolution planes
    let mut planes: Vec<Plane> = (0..img.channels())
        .map(|_| Plane {
            width: pw,
            height: ph,
            data: vec![0.0; pw * ph],
        })
        .collect();
    for y in 0..ph {
        for x in 0..pw {
            let (sx, sy) = (x.min(w - 1), y.min(h - 1));
            let i = y * pw + x;
            if color {
                let ycc = rgb_to_ycbcr(img.get(sx, sy, 0), img.get(sx, sy, 1), img.get(sx, sy, 2));
                for c in 0..3 {
                    planes[c].data[i] = ycc[c] as f64;
                }
            } else {
                planes[0].data[i] = img.get(sx, sy, 0) as f64;
            }
        }
    }
    if color {
        for plane in planes.iter_mut().skip(1) {
            let (cw, ch) = (pw / 2, ph / 2);
            let mut data = vec![0.0; cw * ch];
            for y in 0..ch {
                for x in 0..cw {
                    let at = |dx: usize, dy: usize| plane.data[(2 * y + dy) * pw + 2 * x + dx];
                    data[y * cw + x] = (at(0, 0) + at(1, 0) + at(0, 1) + at(1, 1)) / 4.0;
                }
            }
            *plane = Plane {
                width: cw,
                height: ch,
                data,
            };
        }
    }

    let luma_q = scaled_table(&LUMA_QUANT, quality);
    let chroma_q = scaled_table(&CHROMA_QUANT, quality);
    let mut out = vec![0xff, 0xd8];
    segment(&mut out, 0xe0, b"JFIF\0\x01\x01\x00\x00\x01\x00\x01\x00\x00");
    dqt(&mut out, 0, &luma_q);
    if color {
        dqt(&mut out, 1, &chroma_q);
    }
    let mut sof = vec![8];
    sof.extend_from_slice(&(h as u16).to_be_bytes());
    sof.extend_from_slice(&(w as u16).to_be_bytes());
    if color {
        sof.extend_from_slice(&[3, 1, 0x22, 0, 2, 0x11, 1, 3, 0x11, 1]);
    } else {
        sof.extend_from_slice(&[1, 1, 0x11, 0]);
    }
    segment(&mut out, 0xc0, &sof);
    dht(&mut out, 0, 0, &DC_LUMA);
    dht(&mut out, 1, 0, &AC_LUMA);
    if color {
        dht(&mut out, 0, 1, &DC_CHROMA);
        dht(&mut out, 1, 1, &AC_CHROMA);
        segment(&mut out, 0xda, &[3, 1, 0x00, 2, 0x11, 3, 0x11, 0, 63, 0]);
    } else {
        segment(&mut out, 0xda, &[1, 1, 0x00, 0, 63, 0]);
    }

    let (dcl, acl) = (Encoder::new(&DC_LUMA), Encoder::new(&AC_LUMA));
    let (dcc, acc) = (Encoder::new(&DC_CHROMA), Encoder::new(&AC_CHROMA));
    let mut bits = BitWriter::default();
    let mut pred = [0i32; 3];
    for my in 0..ph / mcu {
        for mx in 0..pw / mcu {
            if color {
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let q = quantize(&planes[0].block(2 * mx + dx, 2 * my + dy), &luma_q);
                    encode_block(&mut bits, &q, pred[0], &dcl, &acl);
                    pred[0] = q[0];
                }
                for c in 1..3 {
                    let q = quantize(&planes[c].block(mx, my), &chroma_q);
                    encode_block(&mut bits, &q, pred[c], &dcc, &acc);
                    pred[c] = q[0];
                }
            } else {
                let q = quantize(&planes[0].block(mx, my), &luma_q);
                encode_block(&mut bits, &q, pred[0], &dcl, &acl);
                pred[0] = q[0];
            }
        }
    }
    debug_assert!(planes.iter().all(|p| p.height % 8 == 0));
    out.extend(bits.finish());
    out.extend_from_slice(&[0xff, 0xd9]);
    Ok(out)
}
