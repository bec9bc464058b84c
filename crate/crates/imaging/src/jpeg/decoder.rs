use super::color::ycbcr_to_rgb_f64;
use super::dct;
use super::huffman::{decode_block, BitReader, Decoder};
use super::tables::ZIGZAG;
use super::JpegError;
use crate::image::{quantize_level, Image};

#[derive(Clone, Debug)]
struct Component {
    id: u8,
    h: usize,
    v: usize,
    tq: usize,
    /// blocks per line / column, padded to whole MCUs
    bw: usize,
    bh: usize,
    coefs: Vec<[i32; 64]>,
}

struct Frame {
    width: usize,
    height: usize,
    hmax: usize,
    vmax: usize,
    comps: Vec<Component>,
}

fn malformed(segment: &'static str, reason: impl Into<String>) -> JpegError {
    JpegError::Malformed {
        segment,
        reason: reason.into(),
    }
}

fn segment_name(marker: u8) -> &'static str {
    match marker {
        0xc0 => "SOF0",
        0xc1 => "SOF1",
        0xc4 => "DHT",
        0xda => "SOS",
        0xdb => "DQT",
        0xdd => "DRI",
        0xe0..=0xef => "APPn",
        0xfe => "COM",
        _ => "marker",
    }
}

fn parse_sof(p: &[u8]) -> Result<Frame, JpegError> {
    if p.len() < 6 {
        return Err(malformed("SOF0", "header too short"));
    }
    if p[0] != 8 {
        return Err(JpegError::Unsupported {
            segment: "SOF0",
            reason: format!("{}-bit samples", p[0]),
        });
    }
    let height = u16::from_be_bytes([p[1], p[2]]) as usize;
    let width = u16::from_be_bytes([p[3], p[4]]) as usize;
    let n = p[5] as usize;
    if width == 0 || height == 0 {
        return Err(malformed("SOF0", "zero frame extent"));
    }
    if n != 1 && n != 3 {
        return Err(JpegError::Unsupported {
            segment: "SOF0",
            reason: format!("{n} components"),
        });
    }
    if p.len() != 6 + 3 * n {
        return Err(malformed("SOF0", "component list length mismatch"));
    }
    let mut comps = Vec::with_capacity(n);
    for c in p[6..].chunks(3) {
        let (h, v) = ((c[1] >> 4) as usize, (c[1] & 15) as usize);
        if !(1..=4).contains(&h) || !(1..=4).contains(&v) || c[2] > 3 {
            return Err(malformed("SOF0", "invalid sampling factor or table id"));
        }
        comps.push(Component {
            id: c[0],
            h,
            v,
            tq: c[2] as usize,
            bw: 0,
            bh: 0,
            coefs: Vec::new(),
        });
    }
    let hmax = comps.iter().map(|c| c.h).max().unwrap_or(1);
    let vmax = comps.iter().map(|c| c.v).max().unwrap_or(1);
    let (mcux, mcuy) = (width.div_ceil(8 * hmax), height.div_ceil(8 * vmax));
    for c in &mut comps {
        c.bw = mcux * c.h;
        c.bh = mcuy * c.v;
        c.coefs = vec![[0; 64]; c.bw * c.bh];
    }
    Ok(Frame {
        width,
        height,
        hmax,
        vmax,
        comps,
    })
}

/// Decodes one scan starting at `data`; returns bytes consumed.
fn decode_scan(
    frame: &mut Frame,
    header: &[u8],
    data: &[u8],
    dc_tables: &[Option<Decoder>; 4],
    ac_tables: &[Option<Decoder>; 4],
) -> Result<usize, JpegError> {
    let ns = *header.first().ok_or_else(|| malformed("SOS", "empty header"))? as usize;
    if ns == 0 || header.len() != 4 + 2 * ns {
        return Err(malformed("SOS", "component list length mismatch"));
    }
    if header[1 + 2 * ns..] != [0, 63, 0] {
        return Err(JpegError::Unsupported {
            segment: "SOS",
            reason: "spectral selection or successive approximation".into(),
        });
    }
    let mut members = Vec::with_capacity(ns);
    for s in header[1..1 + 2 * ns].chunks(2) {
        let ci = frame
            .comps
            .iter()
            .position(|c| c.id == s[0])
            .ok_or_else(|| malformed("SOS", format!("unknown component id {}", s[0])))?;
        let (td, ta) = ((s[1] >> 4) as usize, (s[1] & 15) as usize);
        let dc = dc_tables.get(td).and_then(Option::as_ref).ok_or_else(|| malformed("SOS", "missing DC table"))?;
        let ac = ac_tables.get(ta).and_then(Option::as_ref).ok_or_else(|| malformed("SOS", "missing AC table"))?;
        members.push((ci, dc, ac));
    }
    let mut reader = BitReader::new(data);
    let mut block = [0i32; 64];
    let mut pred = vec![0i32; ns];
    if ns == 1 {
        let (ci, dc, ac) = members[0];
        let c = &mut frame.comps[ci];
        // non-interleaved: only blocks covering the component's own extent
        let cw = (frame.width * c.h).div_ceil(frame.hmax);
        let ch = (frame.height * c.v).div_ceil(frame.vmax);
        for by in 0..ch.div_ceil(8) {
            for bx in 0..cw.div_ceil(8) {
                pred[0] = decode_block(&mut reader, pred[0], dc, ac, &mut block)?;
                c.coefs[by * c.bw + bx] = block;
            }
        }
    } else {
        let (mcux, mcuy) = (frame.width.div_ceil(8 * frame.hmax), frame.height.div_ceil(8 * frame.vmax));
        for my in 0..mcuy {
            for mx in 0..mcux {
                for (k, &(ci, dc, ac)) in members.iter().enumerate() {
                    let (h, v, bw) = (frame.comps[ci].h, frame.comps[ci].v, frame.comps[ci].bw);
                    for dy in 0..v {
                        for dx in 0..h {
                            pred[k] = decode_block(&mut reader, pred[k], dc, ac, &mut block)?;
                            frame.comps[ci].coefs[(my * v + dy) * bw + mx * h + dx] = block;
                        }
                    }
                }
            }
        }
    }
    Ok(reader.position())
}

/// Decodes a baseline (sequential Huffman) JPEG stream into 1 or 3 channels.
pub fn decode(stream: &[u8]) -> Result<Image, JpegError> {
    if stream.len() < 2 || stream[0] != 0xff || stream[1] != 0xd8 {
        return Err(malformed("SOI", "stream does not start with an SOI marker"));
    }
    let mut qt: [Option<[u16; 64]>; 4] = [None; 4];
    let mut dc_tables: [Option<Decoder>; 4] = Default::default();
    let mut ac_tables: [Option<Decoder>; 4] = Default::default();
    let mut frame: Option<Frame> = None;
    let mut scanned = false;
    let mut pos = 2;
    loop {
        // markers may be preceded by fill bytes
        while stream.get(pos) == Some(&0xff) && stream.get(pos + 1) == Some(&0xff) {
            pos += 1;
        }
        let (Some(&0xff), Some(&marker)) = (stream.get(pos), stream.get(pos + 1)) else {
            return Err(if pos + 1 >= stream.len() {
                JpegError::Truncated { segment: "EOI" }
            } else {
                malformed("marker", format!("expected a marker at offset {pos}"))
            });
        };
        pos += 2;
        if marker == 0xd9 {
            break;
        }
        let name = segment_name(marker);
        let len_bytes = stream.get(pos..pos + 2).ok_or(JpegError::Truncated { segment: name })?;
        let len = u16::from_be_bytes([len_bytes[0], len_bytes[1]]) as usize;
        if len < 2 {
            return Err(malformed(name, "segment length below 2"));
        }
        let payload = stream.get(pos + 2..pos + len).ok_or(JpegError::Truncated { segment: name })?;
        pos += len;
        match marker {
            0xc0 | 0xc1 => {
                if frame.is_some() {
                    return Err(malformed(name, "second frame header"));
                }
                frame = Some(parse_sof(payload)?);
            }
            0xc2 | 0xc3 | 0xc5..=0xc7 | 0xc9..=0xcb | 0xcd..=0xcf => {
                return Err(JpegError::Unsupported {
                    segment: "SOFn",
                    reason: format!("frame type 0x{marker:02x} is not baseline sequential"),
                })
            }
            0xdb => {
                let mut p = payload;
                while !p.is_empty() {
                    let (precision, id) = (p[0] >> 4, (p[0] & 15) as usize);
                    let size = if precision == 0 { 64 } else { 128 };
                    if id > 3 || p.len() < 1 + size {
                        return Err(malformed("DQT", "bad table header or length"));
                    }
                    let mut t = [0u16; 64];
                    for k in 0..64 {
                        t[ZIGZAG[k]] = if precision == 0 {
                            p[1 + k] as u16
                        } else {
                            u16::from_be_bytes([p[1 + 2 * k], p[2 + 2 * k]])
                        };
                    }
                    qt[id] = Some(t);
                    p = &p[1 + size..];
                }
            }
            0xc4 => {
                let mut p = payload;
                while !p.is_empty() {
                    if p.len() < 17 {
                        return Err(JpegError::Truncated { segment: "DHT" });
                    }
                    let (class, id) = (p[0] >> 4, (p[0] & 15) as usize);
                    if class > 1 || id > 3 {
                        return Err(malformed("DHT", "bad table class or id"));
                    }
                    let bits: [u8; 16] = p[1..17].try_into().expect("16 bytes");
                    let n: usize = bits.iter().map(|&b| b as usize).sum();
                    let values = p.get(17..17 + n).ok_or(JpegError::Truncated { segment: "DHT" })?.to_vec();
                    let dec = Decoder::new(&bits, values)?;
                    if class == 0 {
                        dc_tables[id] = Some(dec);
                    } else {
                        ac_tables[id] = Some(dec);
                    }
                    p = &p[17 + n..];
                }
            }
            0xdd => {
                if payload.len() == 2 && payload == [0, 0] {
                    continue;
                }
                return Err(JpegError::Unsupported {
                    segment: "DRI",
                    reason: "restart intervals".into(),
                });
            }
            0xda => {
                let f = frame.as_mut().ok_or_else(|| malformed("SOS", "scan before frame header"))?;
                let used = decode_scan(f, payload, &stream[pos..], &dc_tables, &ac_tables)?;
                pos += used;
                scanned = true;
                // skip to the next real marker
                while pos + 1 < stream.len() && !(stream[pos] == 0xff && stream[pos + 1] != 0) {
                    pos += 1;
                }
            }
            0xe0..=0xef | 0xfe => {}
            _ => {
                return Err(JpegError::Unsupported {
                    segment: "marker",
                    reason: format!("marker 0x{marker:02x}"),
                })
            }
        }
    }
    let frame = frame.ok_or_else(|| malformed("SOF0", "no frame header before EOI"))?;
    if !scanned {
        return Err(malformed("SOS", "no scan before EOI"));
    }
    reconstruct(&frame, &qt)
}

fn reconstruct(frame: &Frame, qt: &[Option<[u16; 64]>; 4]) -> Result<Image, JpegError> {
    let mut planes = Vec::with_capacity(frame.comps.len());
    for c in &frame.comps {
        let table = qt[c.tq].ok_or_else(|| malformed("DQT", format!("quantization table {} never defined", c.tq)))?;
        let pw = c.bw * 8;
        let mut plane = vec![0u8; pw * c.bh * 8];
        for by in 0..c.bh {
            for bx in 0..c.bw {
                let q = &c.coefs[by * c.bw + bx];
                let coef: [f64; 64] = std::array::from_fn(|i| (q[i] * table[i] as i32) as f64);
                let px = dct::inverse(&coef);
                for (i, v) in px.iter().enumerate() {
                    plane[(by * 8 + i / 8) * pw + bx * 8 + i % 8] = quantize_level(v + 128.0);
                }
            }
        }
        planes.push((plane, pw));
    }
    let (w, h) = (frame.width, frame.height);
    let full: Vec<Vec<f64>> = frame
        .comps
        .iter()
        .zip(&planes)
        .map(|(c, (plane, pw))| upsample(plane, *pw, c.bh * 8, frame.hmax / c.h, frame.vmax / c.v, w, h))
        .collect();
    let channels = frame.comps.len();
    Image::from_fn(w, h, channels, |x, y, ch| {
        let i = y * w + x;
        if channels == 1 {
            quantize_level(full[0][i])
        } else {
            ycbcr_to_rgb_f64(full[0][i], full[1][i], full[2][i])[ch]
        }
    })
    .map_err(|e| malformed("SOF0", e.to_string()))
}

/// Brings a component plane to full resolution: triangular (3/4, 1/4)
/// interpolation along axes subsampled by two, replication for other ratios.
fn upsample(plane: &[u8], pw: usize, ph: usize, fx: usize, fy: usize, w: usize, h: usize) -> Vec<f64> {
    let pick = |factor: usize, limit: usize, o: usize| -> [(usize, f64); 2] {
        if factor == 2 {
            let i = o / 2;
            let j = if o % 2 == 0 { i.saturating_sub(1) } else { (i + 1).min(limit - 1) };
            [(i, 0.75), (j, 0.25)]
        } else {
            [(o / factor, 1.0), (o / factor, 0.0)]
        }
    };
    // the last valid source row/column for this component
    let (lw, lh) = (w.div_ceil(fx).min(pw), h.div_ceil(fy).min(ph));
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let rows = pick(fy, lh, y);
        for x in 0..w {
            let cols = pick(fx, lw, x);
            let mut v = 0.0;
            for &(ry, wy) in &rows {
                for &(cx, wx) in &cols {
                    v += wy * wx * plane[ry * pw + cx] as f64;
                }
            }
            out[y * w + x] = v;
        }
    }
    out
}
