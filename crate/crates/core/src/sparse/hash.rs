use crate::error::{Error, Result};

/// Largest coordinate magnitude that fits a 16-bit packed field.
pub const COORD_LIMIT: i32 = 32767;

/// Integer voxel index with a batch tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelCoord {
    pub batch: u16,
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl VoxelCoord {
    pub fn new(batch: u16, x: i32, y: i32, z: i32) -> Self {
        Self { batch, x, y, z }
    }

    pub fn offset(self, d: [i32; 3]) -> Self {
        Self::new(self.batch, self.x + d[0], self.y + d[1], self.z + d[2])
    }

    /// 64-bit key with 16-bit fields (batch, x, y, z). Coordinates are biased
    /// by 2^15 so the x field is never zero, which makes key 0 free as the
    /// empty-slot marker.
    pub fn pack(self) -> Result<u64> {
        if [self.x, self.y, self.z].iter().any(|v| v.abs() > COORD_LIMIT) {
            return Err(Error::Domain(format!(
                "voxel coordinate {self:?} outside ±{COORD_LIMIT}"
            )));
        }
        Ok(Self::pack_unchecked(self))
    }

    fn pack_unchecked(self) -> u64 {
        let f = |v: i32| (v + 32768) as u64 & 0xFFFF;
        (self.batch as u64) << 48 | f(self.x) << 32 | f(self.y) << 16 | f(self.z)
    }

    fn in_range(self) -> bool {
        [self.x, self.y, self.z].iter().all(|v| v.abs() <= COORD_LIMIT)
    }
}

/// Open-addressing (linear probing) map from packed voxel keys to row numbers.
#[derive(Clone, Debug)]
pub struct CoordHash {
    keys: Vec<u64>,
    rows: Vec<u32>,
    mask: usize,
    len: usize,
}

impl CoordHash {
    pub fn with_capacity(n: usize) -> Self {
        let cap = (n.max(4) * 2).next_power_of_two();
        Self {
            keys: vec![0; cap],
            rows: vec![0; cap],
            mask: cap - 1,
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    fn slot_of(&self, key: u64) -> usize {
        // splitmix-style finalizer spreads the packed fields over the table
        let mut h = key.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        h ^= h >> 29;
        h as usize & self.mask
    }

    fn grow(&mut self) {
        let old_keys = std::mem::take(&mut self.keys);
        let old_rows = std::mem::take(&mut self.rows);
        let cap = old_keys.len() * 2;
        self.keys = vec![0; cap];
        self.rows = vec![0; cap];
        self.mask = cap - 1;
        self.len = 0;
        for (k, r) in old_keys.into_iter().zip(old_rows) {
            if k != 0 {
                self.insert_key(k, r);
            }
        }
    }

    /// Inserts `coord → row` unless present; returns the row stored for `coord`.
    pub fn get_or_insert(&mut self, coord: VoxelCoord, row: u32) -> Result<u32> {
        let key = coord.pack()?;
        Ok(self.insert_key(key, row))
    }

    fn insert_key(&mut self, key: u64, row: u32) -> u32 {
        if (self.len + 1) * 2 > self.keys.len() {
            self.grow();
        }
        let mut s = self.slot_of(key);
        loop {
            match self.keys[s] {
                0 => {
                    self.keys[s] = key;
                    self.rows[s] = row;
                    self.len += 1;
                    return row;
                }
                k if k == key => return self.rows[s],
                _ => s = (s + 1) & self.mask,
            }
        }
    }

    pub fn get(&self, coord: VoxelCoord) -> Option<u32> {
        if !coord.in_range() {
            return None;
        }
        let key = coord.pack_unchecked();
        let mut s = self.slot_of(key);
        loop {
            match self.keys[s] {
                0 => return None,
                k if k == key => return Some(self.rows[s]),
                _ => s = (s + 1) & self.mask,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    #[test]
    fn out_of_range_rejected() {
        let mut h = CoordHash::with_capacity(1);
        assert!(h.get_or_insert(VoxelCoord::new(0, 40000, 0, 0), 0).is_err());
        assert!(h.get_or_insert(VoxelCoord::new(0, -32767, 32767, 0), 0).is_ok());
        assert_eq!(h.get(VoxelCoord::new(0, 99999, 0, 0)), None);
    }

    #[test]
    fn first_insert_wins() {
        let mut h = CoordHash::with_capacity(1);
        let c = VoxelCoord::new(1, -3, 4, 5);
        assert_eq!(h.get_or_insert(c, 7).unwrap(), 7);
        assert_eq!(h.get_or_insert(c, 9).unwrap(), 7);
        assert_eq!(h.len(), 1);
    }

    proptest! {
        #[test]
        fn agrees_with_std_hashmap(coords in prop::collection::vec((0u16..3, -50i32..50, -50i32..50, -50i32..50), 1..400)) {
            let mut ours = CoordHash::with_capacity(4);
            let mut reference = HashMap::new();
            for (row, &(b, x, y, z)) in coords.iter().enumerate() {
                let c = VoxelCoord::new(b, x, y, z);
                let got = ours.get_or_insert(c, row as u32).unwrap();
                let want = *reference.entry(c).or_insert(row as u32);
                prop_assert_eq!(got, want);
            }
            prop_assert_eq!(ours.len(), reference.len());
            for (c, r) in &reference {
                prop_assert_eq!(ours.get(*c), Some(*r));
            }
            prop_assert_eq!(ours.get(VoxelCoord::new(9, 0, 0, 0)), None);
        }
    }
}
