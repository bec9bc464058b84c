//! Canonical Huffman coding, bit I/O with byte stuffing, and coefficient coding.

use super::tables::{HuffmanSpec, ZIGZAG};
use super::JpegError;

/// Symbol → (code, length) lookup built from a table specification.
#[derive(Clone, Debug)]
pub struct Encoder {
    codes: [(u16, u8); 256],
}

impl Encoder {
    pub fn new(spec: &HuffmanSpec) -> Self {
        let mut codes = [(0u16, 0u8); 256];
        let mut code = 0u16;
        let mut k = 0;
        for len in 1..=16u8 {
            for _ in 0..spec.bits[len as usize - 1] {
                codes[spec.values[k] as usize] = (code, len);
                code += 1;
                k += 1;
            }
            code <<= 1;
        }
        Encoder { codes }
    }

    pub fn code(&self, symbol: u8) -> (u16, u8) {
        self.codes[symbol as usize]
    }
}

/// Canonical decoding tables (per-length max code and value offsets).
#[derive(Clone, Debug)]
pub struct Decoder {
    maxcode: [i32; 17],
    valptr: [i32; 17],
    mincode: [i32; 17],
    values: Vec<u8>,
}

impl Decoder {
    pub fn new(bits: &[u8; 16], values: Vec<u8>) -> Result<Self, JpegError> {
        let total: usize = bits.iter().map(|&b| b as usize).sum();
        if total != values.len() || total > 256 {
            return Err(JpegError::Malformed {
                segment: "DHT",
                reason: format!("table declares {total} codes but carries {} symbols", values.len()),
            });
        }
        let mut maxcode = [-1i32; 17];
        let mut valptr = [0i32; 17];
        let mut mincode = [0i32; 17];
        let mut code = 0i32;
        let mut k = 0i32;
        for len in 1..=16 {
            let n = bits[len - 1] as i32;
            if n > 0 {
                valptr[len] = k;
                mincode[len] = code;
                code += n;
                k += n;
                maxcode[len] = code - 1;
            }
            if code > (1 << len) {
                return Err(JpegError::Malformed {
                    segment: "DHT",
                    reason: "code lengths overflow the code space".into(),
                });
            }
            code <<= 1;
        }
        Ok(Decoder {
            maxcode,
            valptr,
            mincode,
            values,
        })
    }

    pub fn decode(&self, reader: &mut BitReader) -> Result<u8, JpegError> {
        let mut code = 0i32;
        for len in 1..=16 {
            code = (code << 1) | reader.bit()? as i32;
            if code <= self.maxcode[len] {
                return Ok(self.values[(self.valptr[len] + code - self.mincode[len]) as usize]);
            }
        }
        Err(JpegError::Malformed {
            segment: "SOS",
            reason: "invalid Huffman code in entropy-coded data".into(),
        })
    }
}

/// MSB-first bit sink that stuffs a zero byte after every 0xFF.
#[derive(Default)]
pub struct BitWriter {
    out: Vec<u8>,
    acc: u32,
    nbits: u8,
}

impl BitWriter {
    pub fn put(&mut self, bits: u16, len: u8) {
        for i in (0..len).rev() {
            self.acc = (self.acc << 1) | ((bits >> i) & 1) as u32;
            self.nbits += 1;
            if self.nbits == 8 {
                let byte = self.acc as u8;
                self.out.push(byte);
                if byte == 0xff {
                    self.out.push(0);
                }
                self.acc = 0;
                self.nbits = 0;
            }
        }
    }

    /// Pads the final partial byte with one-bits.
    pub fn finish(mut self) -> Vec<u8> {
        if self.nbits > 0 {
            let pad = 8 - self.nbits;
            self.put((1 << pad) - 1, pad);
        }
        self.out
    }
}

/// MSB-first bit source over entropy-coded bytes; stops at any marker.
pub struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
    byte: u8,
    left: u8,
}

impl<'a> BitReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        BitReader {
            data,
            pos: 0,
            byte: 0,
            left: 0,
        }
    }

    /// Offset of the first byte not yet consumed.
    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn bit(&mut self) -> Result<u8, JpegError> {
        if self.left == 0 {
            let &b = self.data.get(self.pos).ok_or(JpegError::Truncated { segment: "SOS" })?;
            if b == 0xff {
                match self.data.get(self.pos + 1) {
                    Some(0) => self.pos += 2,
                    Some(_) => {
                        return Err(JpegError::Malformed {
                            segment: "SOS",
                            reason: "marker reached before the scan was complete".into(),
                        })
                    }
                    None => return Err(JpegError::Truncated { segment: "SOS" }),
                }
            } else {
                self.pos += 1;
            }
            self.byte = b;
            self.left = 8;
        }
        self.left -= 1;
        Ok((self.byte >> self.left) & 1)
    }

    pub fn bits(&mut self, n: u8) -> Result<u16, JpegError> {
        let mut v = 0u16;
        for _ in 0..n {
            v = (v << 1) | self.bit()? as u16;
        }
        Ok(v)
    }
}

/// Magnitude category and appended bits for a coefficient value.
pub fn category(v: i32) -> (u8, u16) {
    if v == 0 {
        return (0, 0);
    }
    let size = 32 - v.unsigned_abs().leading_zeros() as u8;
    let bits = if v > 0 { v } else { v + (1 << size) - 1 };
    (size, bits as u16)
}

/// Inverse of [`category`].
pub fn extend(bits: u16, size: u8) -> i32 {
    if size == 0 {
        return 0;
    }
    let v = bits as i32;
    if v < 1 << (size - 1) {
        v - (1 << size) + 1
    } else {
        v
    }
}

/// Writes one quantized block (natural order) given the previous DC value.
pub fn encode_block(w: &mut BitWriter, block: &[i32; 64], prev_dc: i32, dc: &Encoder, ac: &Encoder) {
    let (size, bits) = category(block[0] - prev_dc);
    let (code, len) = dc.code(size);
    w.put(code, len);
    w.put(bits, size);
    let mut run = 0u8;
    for &nat in &ZIGZAG[1..] {
        let v = block[nat];
        if v == 0 {
            run += 1;
            continue;
        }
        while run > 15 {
            let (code, len) = ac.code(0xf0);
            w.put(code, len);
            run -= 16;
        }
        let (size, bits) = category(v);
        let (code, len) = ac.code(run << 4 | size);
        w.put(code, len);
        w.put(bits, size);
        run = 0;
    }
    if run > 0 {
        let (code, len) = ac.code(0x00);
        w.put(code, len);
    }
}

/// Reads one block into natural order; returns the new DC predictor.
pub fn decode_block(r: &mut BitReader, prev_dc: i32, dc: &Decoder, ac: &Decoder, out: &mut [i32; 64]) -> Result<i32, JpegError> {
    *out = [0; 64];
    let size = dc.decode(r)?;
    if size > 11 {
        return Err(JpegError::Malformed {
            segment: "SOS",
            reason: format!("DC magnitude category {size} out of range"),
        });
    }
    let dc_val = prev_dc + extend(r.bits(size)?, size);
    out[0] = dc_val;
    let mut k = 1;
    while k < 64 {
        let rs = ac.decode(r)?;
        let (run, size) = ((rs >> 4) as usize, rs & 15);
        if size == 0 {
            if run == 15 {
                k += 16;
                continue;
            }
            break;
        }
        k += run;
        if k > 63 || size > 10 {
            return Err(JpegError::Malformed {
                segment: "SOS",
                reason: "AC run exceeds block".into(),
            });
        }
        out[ZIGZAG[k]] = extend(r.bits(size)?, size);
        k += 1;
    }
    if k > 64 {
        return Err(JpegError::Malformed {
            segment: "SOS",
            reason: "AC run exceeds block".into(),
        });
    }
    Ok(dc_val)
}
