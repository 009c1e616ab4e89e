//! Decoder for the subset of the ONNX protobuf schema needed to run inference
//! graphs: model, graph, node, attribute, tensor and value-info messages.

use crate::error::{Error, Result};

fn err(msg: impl Into<String>) -> Error {
    Error::Onnx(msg.into())
}

/// One decoded protobuf field.
enum Field<'a> {
    Varint(u64),
    Fixed64([u8; 8]),
    Bytes(&'a [u8]),
    Fixed32([u8; 4]),
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn varint(&mut self) -> Result<u64> {
        let mut value = 0u64;
        for shift in (0..64).step_by(7) {
            let byte = *self.buf.get(self.pos).ok_or_else(|| err("truncated varint"))?;
            self.pos += 1;
            value |= u64::from(byte & 0x7f) << shift;
            if byte < 0x80 {
                return Ok(value);
            }
        }
        Err(err("varint longer than 10 bytes"))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| err("field runs past the end of the message"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn next(&mut self) -> Result<Option<(u32, Field<'a>)>> {
        if self.pos >= self.buf.len() {
            return Ok(None);
        }
        let key = self.varint()?;
        let number = (key >> 3) as u32;
        let field = match key & 7 {
            0 => Field::Varint(self.varint()?),
            1 => Field::Fixed64(self.take(8)?.try_into().expect("8 bytes")),
            2 => {
                let len = self.varint()? as usize;
                Field::Bytes(self.take(len)?)
            }
            5 => Field::Fixed32(self.take(4)?.try_into().expect("4 bytes")),
            wire => return Err(err(format!("unsupported wire type {wire}"))),
        };
        Ok(Some((number, field)))
    }
}

fn string(bytes: &[u8]) -> Result<String> {
    String::from_utf8(bytes.to_vec()).map_err(|_| err("string field is not utf-8"))
}

/// Repeated int64 that may arrive packed or one value per field.
fn push_ints(out: &mut Vec<i64>, field: Field) -> Result<()> {
    match field {
        Field::Varint(v) => out.push(v as i64),
        Field::Bytes(b) => {
            let mut r = Reader::new(b);
            while r.pos < b.len() {
                out.push(r.varint()? as i64);
            }
        }
        _ => return Err(err("expected an integer field")),
    }
    Ok(())
}

fn push_floats(out: &mut Vec<f32>, field: Field) -> Result<()> {
    match field {
        Field::Fixed32(b) => out.push(f32::from_le_bytes(b)),
        Field::Bytes(b) => {
            if b.len() % 4 != 0 {
                return Err(err("packed float field has a ragged length"));
            }
            out.extend(
                b.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))),
            );
        }
        _ => return Err(err("expected a float field")),
    }
    Ok(())
}

fn push_doubles(out: &mut Vec<f64>, field: Field) -> Result<()> {
    match field {
        Field::Fixed64(b) => out.push(f64::from_le_bytes(b)),
        Field::Bytes(b) => {
            if b.len() % 8 != 0 {
                return Err(err("packed double field has a ragged length"));
            }
            out.extend(
                b.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))),
            );
        }
        _ => return Err(err("expected a double field")),
    }
    Ok(())
}

fn bytes<'a>(field: Field<'a>) -> Result<&'a [u8]> {
    match field {
        Field::Bytes(b) => Ok(b),
        _ => Err(err("expected a length-delimited field")),
    }
}

fn varint(field: Field) -> Result<u64> {
    match field {
        Field::Varint(v) => Ok(v),
        _ => Err(err("expected a varint field")),
    }
}

/// ONNX element types understood by the interpreter.
pub mod data_type {
    pub const FLOAT: i32 = 1;
    pub const UINT8: i32 = 2;
    pub const INT8: i32 = 3;
    pub const INT32: i32 = 6;
    pub const INT64: i32 = 7;
    pub const BOOL: i32 = 9;
    pub const DOUBLE: i32 = 11;
}

#[derive(Debug, Clone, Default)]
pub struct TensorProto {
    pub name: String,
    pub dims: Vec<i64>,
    pub data_type: i32,
    pub float_data: Vec<f32>,
    pub int32_data: Vec<i64>,
    pub int64_data: Vec<i64>,
    pub double_data: Vec<f64>,
    pub raw_data: Vec<u8>,
    pub external: bool,
}

impl TensorProto {
    fn decode(buf: &[u8]) -> Result<Self> {
        let mut t = TensorProto::default();
        let mut r = Reader::new(buf);
        while let Some((n, f)) = r.next()? {
            match n {
                1 => push_ints(&mut t.dims, f)?,
                2 => t.data_type = varint(f)? as i32,
                4 => push_floats(&mut t.float_data, f)?,
                5 => push_ints(&mut t.int32_data, f)?,
                7 => push_ints(&mut t.int64_data, f)?,
                8 => t.name = string(bytes(f)?)?,
                9 => t.raw_data = bytes(f)?.to_vec(),
                10 => push_doubles(&mut t.double_data, f)?,
                13 => t.external = true,
                14 => t.external |= varint(f)? == 1,
                _ => {}
            }
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, Default)]
pub struct AttributeProto {
    pub name: String,
    pub f: Option<f32>,
    pub i: Option<i64>,
    pub s: Option<Vec<u8>>,
    pub t: Option<TensorProto>,
    pub floats: Vec<f32>,
    pub ints: Vec<i64>,
}

impl AttributeProto {
    fn decode(buf: &[u8]) -> Result<Self> {
        let mut a = AttributeProto::default();
        let mut r = Reader::new(buf);
        while let Some((n, f)) = r.next()? {
            match n {
                1 => a.name = string(bytes(f)?)?,
                2 => {
                    let mut v = Vec::new();
                    push_floats(&mut v, f)?;
                    a.f = v.pop();
                }
                3 => a.i = Some(varint(f)? as i64),
                4 => a.s = Some(bytes(f)?.to_vec()),
                5 => a.t = Some(TensorProto::decode(bytes(f)?)?),
                7 => push_floats(&mut a.floats, f)?,
                8 => push_ints(&mut a.ints, f)?,
                _ => {}
            }
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, Default)]
pub struct NodeProto {
    pub name: String,
    pub op_type: String,
    pub domain: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub attributes: Vec<AttributeProto>,
}

impl NodeProto {
    fn decode(buf: &[u8]) -> Result<Self> {
        let mut node = NodeProto::default();
        let mut r = Reader::new(buf);
        while let Some((n, f)) = r.next()? {
            match n {
                1 => node.inputs.push(string(bytes(f)?)?),
                2 => node.outputs.push(string(bytes(f)?)?),
                3 => node.name = string(bytes(f)?)?,
                4 => node.op_type = string(bytes(f)?)?,
                5 => node.attributes.push(AttributeProto::decode(bytes(f)?)?),
                7 => node.domain = string(bytes(f)?)?,
                _ => {}
            }
        }
        Ok(node)
    }

    pub fn attr(&self, name: &str) -> Option<&AttributeProto> {
        self.attributes.iter().find(|a| a.name == name)
    }
}

fn value_info_name(buf: &[u8]) -> Result<String> {
    let mut r = Reader::new(buf);
    while let Some((n, f)) = r.next()? {
        if n == 1 {
            return string(bytes(f)?);
        }
    }
    Err(err("value info without a name"))
}

#[derive(Debug, Clone, Default)]
pub struct GraphProto {
    pub name: String,
    pub nodes: Vec<NodeProto>,
    pub initializers: Vec<TensorProto>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl GraphProto {
    fn decode(buf: &[u8]) -> Result<Self> {
        let mut g = GraphProto::default();
        let mut r = Reader::new(buf);
        while let Some((n, f)) = r.next()? {
            match n {
                1 => g.nodes.push(NodeProto::decode(bytes(f)?)?),
                2 => g.name = string(bytes(f)?)?,
                5 => g.initializers.push(TensorProto::decode(bytes(f)?)?),
                11 => g.inputs.push(value_info_name(bytes(f)?)?),
                12 => g.outputs.push(value_info_name(bytes(f)?)?),
                _ => {}
            }
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ModelProto {
    pub ir_version: i64,
    pub opset: Option<i64>,
    pub graph: GraphProto,
}

impl ModelProto {
    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut m = ModelProto::default();
        let mut graph = None;
        let mut r = Reader::new(buf);
        while let Some((n, f)) = r.next()? {
            match n {
                1 => m.ir_version = varint(f)? as i64,
                7 => graph = Some(GraphProto::decode(bytes(f)?)?),
                8 => {
                    let mut domain = String::new();
                    let mut version = None;
                    let mut rr = Reader::new(bytes(f)?);
                    while let Some((nn, ff)) = rr.next()? {
                        match nn {
                            1 => domain = string(bytes(ff)?)?,
                            2 => version = Some(varint(ff)? as i64),
                            _ => {}
                        }
                    }
                    if domain.is_empty() || domain == "ai.onnx" {
                        m.opset = version;
                    }
                }
                _ => {}
            }
        }
        m.graph = graph.ok_or_else(|| err("model has no graph"))?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(field: u32, wire: u8) -> u8 {
        ((field << 3) as u8) | wire
    }

    #[test]
    fn decodes_packed_and_unpacked_ints() {
        // dims: packed [2, 300]; data_type 7; int64_data unpacked 5, 6
        let mut buf = vec![key(1, 2), 3, 2, 0xac, 0x02];
        buf.extend([key(2, 0), 7, key(7, 0), 5, key(7, 0), 6]);
        let t = TensorProto::decode(&buf).unwrap();
        assert_eq!(t.dims, vec![2, 300]);
        assert_eq!(t.data_type, data_type::INT64);
        assert_eq!(t.int64_data, vec![5, 6]);
    }

    #[test]
    fn rejects_truncation() {
        let buf = vec![key(8, 2), 10, b'a'];
        assert!(TensorProto::decode(&buf).is_err());
        assert!(TensorProto::decode(&[0x80]).is_err());
    }
}
