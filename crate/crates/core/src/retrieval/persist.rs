//! Binary index file: 8-byte magic, version byte, then little-endian
//! length-prefixed sections (documents, document lengths, postings, average
//! document length as raw f64 bits).

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::bm25::{mean_length, Index, Posting};
use super::{CorpusDoc, RetrievalError};

pub const INDEX_MAGIC: &[u8; 8] = b"SRBM25IX";
pub const INDEX_VERSION: u8 = 1;

impl Index {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), RetrievalError> {
        let mut buf = Vec::new();
        buf.extend_from_slice(INDEX_MAGIC);
        buf.push(INDEX_VERSION);
        put_u32(&mut buf, self.docs.len());
        for (doc, len) in self.docs.iter().zip(&self.doc_lengths) {
            put_str(&mut buf, &doc.id);
            put_str(&mut buf, &doc.title);
            put_str(&mut buf, &doc.body);
            buf.extend_from_slice(&len.to_le_bytes());
        }
        put_u32(&mut buf, self.postings.len());
        for (term, list) in &self.postings {
            put_str(&mut buf, term);
            put_u32(&mut buf, list.len());
            for p in list {
                buf.extend_from_slice(&p.doc.to_le_bytes());
                buf.extend_from_slice(&p.tf.to_le_bytes());
            }
        }
        buf.extend_from_slice(&self.avg_doc_length.to_bits().to_le_bytes());
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Index, RetrievalError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(8)? != INDEX_MAGIC {
            return Err(invalid("bad magic header"));
        }
        let version = cur.take(1)?[0];
        if version != INDEX_VERSION {
            return Err(invalid(&format!("unsupported version {version}")));
        }
        let n_docs = cur.u32()? as usize;
        let mut docs = Vec::with_capacity(n_docs.min(1 << 20));
        let mut doc_lengths = Vec::with_capacity(n_docs.min(1 << 20));
        for _ in 0..n_docs {
            let id = cur.string()?;
            let title = cur.string()?;
            let body = cur.string()?;
            docs.push(CorpusDoc { id, title, body });
            doc_lengths.push(cur.u32()?);
        }
        let n_terms = cur.u32()? as usize;
        let mut postings = BTreeMap::new();
        for _ in 0..n_terms {
            let term = cur.string()?;
            let n = cur.u32()? as usize;
            let mut list = Vec::with_capacity(n.min(n_docs));
            for _ in 0..n {
                let doc = cur.u32()?;
                let tf = cur.u32()?;
                if doc as usize >= n_docs {
                    return Err(invalid("posting references a missing document"));
                }
                list.push(Posting { doc, tf });
            }
            postings.insert(term, list);
        }
        let avg_bits = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes"));
        let avg_doc_length = f64::from_bits(avg_bits);
        if cur.pos != bytes.len() {
            return Err(invalid("trailing bytes"));
        }
        if avg_doc_length.to_bits() != mean_length(&doc_lengths).to_bits() {
            return Err(invalid("average document length does not match lengths"));
        }
        Ok(Index { docs, postings, doc_lengths, avg_doc_length })
    }
}

fn invalid(msg: &str) -> RetrievalError {
    RetrievalError::InvalidIndexFile(msg.to_owned())
}

fn put_u32(buf: &mut Vec<u8>, n: usize) {
    let n = u32::try_from(n).expect("index section exceeds u32 range");
    buf.extend_from_slice(&n.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len());
    buf.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RetrievalError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| invalid("unexpected end of file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, RetrievalError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String, RetrievalError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| invalid("string is not UTF-8"))
    }
}
