use serde::Serialize;

use crate::ir::ValueType;

/// Unmapped bytes left after every region.
pub const GUARD_GAP: u64 = 4096;
/// Address of the first region. Keeps address 0 and its neighbourhood unmapped.
pub const ORIGIN: u64 = 0x1000_0000;

/// Shape of one array argument.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArraySpec {
    pub param: String,
    pub elem: ValueType,
    /// Element size in bytes.
    pub elem_size: u64,
    /// Element count, at least 1.
    pub length: u64,
}

impl ArraySpec {
    pub fn new(param: impl Into<String>, elem: ValueType, length: u64) -> Self {
        ArraySpec {
            param: param.into(),
            elem,
            elem_size: elem.byte_size(),
            length,
        }
    }

    pub fn byte_len(&self) -> u64 {
        self.elem_size * self.length
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub base: u64,
    pub spec: ArraySpec,
    pub bytes: Vec<u8>,
}

impl Region {
    pub fn end(&self) -> u64 {
        self.base + self.bytes.len() as u64
    }
}

/// A sparse byte-addressed space: disjoint array regions separated by
/// unmapped guard gaps. Accesses that touch any unmapped byte fault.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryImage {
    regions: Vec<Region>,
}

fn align_up(x: u64, to: u64) -> u64 {
    x.div_ceil(to) * to
}

impl MemoryImage {
    /// Lays the arrays out in order from [`ORIGIN`], page aligned, each
    /// followed by at least [`GUARD_GAP`] unmapped bytes. Contents are zero.
    pub fn layout(specs: &[ArraySpec]) -> MemoryImage {
        let mut regions = Vec::with_capacity(specs.len());
        let mut next = ORIGIN;
        for spec in specs {
            assert!(spec.length >= 1, "array {} must not be empty", spec.param);
            let base = next;
            let len = spec.byte_len();
            regions.push(Region {
                base,
                spec: spec.clone(),
                bytes: vec![0; len as usize],
            });
            next = align_up(base + len + GUARD_GAP, GUARD_GAP);
        }
        MemoryImage { regions }
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region(&self, param: &str) -> Option<&Region> {
        self.regions.iter().find(|r| r.spec.param == param)
    }

    pub fn region_mut(&mut self, param: &str) -> Option<&mut Region> {
        self.regions.iter_mut().find(|r| r.spec.param == param)
    }

    pub fn base_of(&self, param: &str) -> Option<u64> {
        self.region(param).map(|r| r.base)
    }

    /// Region index and byte offset for an access of `len` bytes at `addr`,
    /// if every byte is mapped.
    fn locate(&self, addr: u64, len: u64) -> Option<(usize, usize)> {
        let end = addr.checked_add(len)?;
        let i = self.regions.partition_point(|r| r.base <= addr);
        let idx = i.checked_sub(1)?;
        let r = &self.regions[idx];
        (end <= r.end()).then(|| (idx, (addr - r.base) as usize))
    }

    pub fn is_mapped(&self, addr: u64, len: u64) -> bool {
        self.locate(addr, len).is_some()
    }

    pub fn load_u64(&self, addr: u64) -> Option<u64> {
        let (r, off) = self.locate(addr, 8)?;
        let bytes: [u8; 8] = self.regions[r].bytes[off..off + 8]
            .try_into()
            .expect("8-byte slice");
        Some(u64::from_le_bytes(bytes))
    }

    #[must_use]
    pub fn store_u64(&mut self, addr: u64, bits: u64) -> bool {
        match self.locate(addr, 8) {
            Some((r, off)) => {
                self.regions[r].bytes[off..off + 8].copy_from_slice(&bits.to_le_bytes());
                true
            }
            None => false,
        }
    }

    /// Writes `values` as little-endian words into the array `param`.
    pub fn fill(&mut self, param: &str, values: impl IntoIterator<Item = u64>) {
        let region = self.region_mut(param).expect("unknown array");
        for (chunk, v) in region.bytes.chunks_exact_mut(8).zip(values) {
            chunk.copy_from_slice(&v.to_le_bytes());
        }
    }

    /// Array contents as `f64`.
    pub fn read_f64(&self, param: &str) -> Vec<f64> {
        self.read_words(param)
            .into_iter()
            .map(f64::from_bits)
            .collect()
    }

    pub fn read_words(&self, param: &str) -> Vec<u64> {
        self.region(param)
            .map(|r| {
                r.bytes
                    .chunks_exact(8)
                    .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect()
            })
            .unwrap_or_default()
    }
}
