//! Binary template files.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! header   "LFTM"  magic
//!          u16     version (1)
//!          u8      number of minutiae templates
//!          u8      texture template present (0 or 1)
//! section  u32     byte length of the body that follows
//!          body    one template, minutiae templates first, then texture
//!
//! minutiae body   u8 source code, u32 n, n minutiae, n descriptors
//! texture body    u32 n, n minutiae, n descriptors
//! minutia         f64 x, f64 y, f64 theta
//! descriptor      u8 stage (0 raw, 1 compressed, 2 quantized), u16 len,
//!                 len f32 values or len u8 codes
//! ```
//!
//! A reference file holds one minutiae template and one texture template, a
//! latent file three minutiae templates and one texture template.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{format_err, Error, Result};
use crate::model::{Descriptor, DescriptorStage, Minutia, MinutiaeTemplate, SourceTag, TextureTemplate};

const MAGIC: &[u8; 4] = b"LFTM";
const VERSION: u16 = 1;

/// Minutiae templates plus an optional texture template, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    pub minutiae: Vec<MinutiaeTemplate>,
    pub texture: Option<TextureTemplate>,
}

fn write_minutiae(w: &mut Vec<u8>, ms: &[Minutia]) {
    for m in ms {
        for v in [m.x, m.y, m.theta] {
            w.write_f64::<LittleEndian>(v).expect("vec write");
        }
    }
}

fn write_descriptors(w: &mut Vec<u8>, ds: &[Descriptor]) -> Result<()> {
    for d in ds {
        let len = u16::try_from(d.len()).map_err(|_| format_err("descriptor too long"))?;
        match d {
            Descriptor::Raw(v) | Descriptor::Compressed(v) => {
                w.push(if d.stage() == DescriptorStage::Raw { 0 } else { 1 });
                w.write_u16::<LittleEndian>(len)?;
                for &x in v {
                    w.write_f32::<LittleEndian>(x)?;
                }
            }
            Descriptor::Quantized(c) => {
                w.push(2);
                w.write_u16::<LittleEndian>(len)?;
                w.extend_from_slice(c);
            }
        }
    }
    Ok(())
}

fn count(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| format_err("template too large"))
}

fn read_minutiae<R: Read>(r: &mut R, n: usize, virt: bool) -> Result<Vec<Minutia>> {
    let mut out = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let (x, y, theta) = (r.read_f64::<LittleEndian>()?, r.read_f64::<LittleEndian>()?, r.read_f64::<LittleEndian>()?);
        if !(x.is_finite() && y.is_finite() && (0.0..std::f64::consts::TAU).contains(&theta)) {
            return Err(format_err("minutia out of range"));
        }
        let mut m = if virt { Minutia::virtual_at(x, y, 0.0) } else { Minutia::real(x, y, 0.0) };
        m.theta = theta;
        out.push(m);
    }
    Ok(out)
}

fn read_descriptors<R: Read>(r: &mut R, n: usize) -> Result<Vec<Descriptor>> {
    let mut out = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let stage = r.read_u8()?;
        let len = r.read_u16::<LittleEndian>()? as usize;
        let d = match stage {
            0 | 1 => {
                let mut v = vec![0f32; len];
                r.read_f32_into::<LittleEndian>(&mut v)?;
                if stage == 0 {
                    Descriptor::raw(v)
                } else {
                    Descriptor::compressed(v)
                }
            }
            2 => {
                let mut c = vec![0u8; len];
                r.read_exact(&mut c)?;
                Descriptor::quantized(c)
            }
            s => return Err(format_err(format!("unknown descriptor stage {s}"))),
        };
        out.push(d.map_err(|e| format_err(e.to_string()))?);
    }
    Ok(out)
}

fn section<W: Write>(w: &mut W, body: &[u8]) -> Result<()> {
    w.write_u32::<LittleEndian>(count(body.len())?)?;
    w.write_all(body)?;
    Ok(())
}

fn read_section<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut body = Vec::new();
    r.take(len as u64).read_to_end(&mut body)?;
    if body.len() != len {
        return Err(format_err("truncated section"));
    }
    Ok(body)
}

fn finish(cur: &Cursor<Vec<u8>>) -> Result<()> {
    if cur.position() as usize != cur.get_ref().len() {
        return Err(format_err("trailing bytes in section"));
    }
    Ok(())
}

impl TemplateSet {
    pub fn reference(minutiae: MinutiaeTemplate, texture: TextureTemplate) -> Self {
        TemplateSet { minutiae: vec![minutiae], texture: Some(texture) }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let n = u8::try_from(self.minutiae.len()).map_err(|_| format_err("too many minutiae templates"))?;
        w.write_all(MAGIC)?;
        w.write_u16::<LittleEndian>(VERSION)?;
        w.write_u8(n)?;
        w.write_u8(u8::from(self.texture.is_some()))?;
        for t in &self.minutiae {
            let mut body = vec![t.source().code()];
            body.write_u32::<LittleEndian>(count(t.len())?)?;
            write_minutiae(&mut body, t.minutiae());
            write_descriptors(&mut body, t.descriptors())?;
            section(&mut w, &body)?;
        }
        if let Some(t) = &self.texture {
            let mut body = Vec::new();
            body.write_u32::<LittleEndian>(count(t.len())?)?;
            write_minutiae(&mut body, t.minutiae());
            write_descriptors(&mut body, t.descriptors())?;
            section(&mut w, &body)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(format_err("not a template file"));
        }
        let version = r.read_u16::<LittleEndian>()?;
        if version != VERSION {
            return Err(format_err(format!("unsupported template version {version}")));
        }
        let n = r.read_u8()? as usize;
        let has_texture = match r.read_u8()? {
            0 => false,
            1 => true,
            _ => return Err(format_err("bad texture flag")),
        };
        let mut minutiae = Vec::with_capacity(n);
        for _ in 0..n {
            let mut cur = Cursor::new(read_section(&mut r)?);
            let code = cur.read_u8()?;
            let source = SourceTag::from_code(code).ok_or_else(|| format_err(format!("unknown source tag {code}")))?;
            let len = cur.read_u32::<LittleEndian>()? as usize;
            let ms = read_minutiae(&mut cur, len, false)?;
            let ds = read_descriptors(&mut cur, len)?;
            finish(&cur)?;
            minutiae.push(MinutiaeTemplate::new(ms, ds, source).map_err(|e| format_err(e.to_string()))?);
        }
        let texture = if has_texture {
            let mut cur = Cursor::new(read_section(&mut r)?);
            let len = cur.read_u32::<LittleEndian>()? as usize;
            let ms = read_minutiae(&mut cur, len, true)?;
            let ds = read_descriptors(&mut cur, len)?;
            finish(&cur)?;
            Some(TextureTemplate::new(ms, ds).map_err(|e| format_err(e.to_string()))?)
        } else {
            None
        };
        Ok(TemplateSet { minutiae, texture })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let set = TemplateSet::read_from(&mut cur)?;
        if cur.position() as usize != bytes.len() {
            return Err(format_err("trailing bytes after templates"));
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(Error::from)
    }

    pub fn load(path: &Path) -> Result<Self> {
        TemplateSet::from_bytes(&std::fs::read(path)?)
    }
}
