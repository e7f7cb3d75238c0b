use std::collections::BTreeMap;
use std::ops::Range;

use super::SackBlocks;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecvOutcome {
    /// Stream bytes that just became deliverable in order.
    pub delivered: Range<u64>,
    pub cum: u64,
    pub sacks: SackBlocks,
    pub duplicate: bool,
}

/// Receiving half of a transport leg: in-order reassembly plus SACK blocks.
#[derive(Debug, Clone, Default)]
pub struct TcpReceiver {
    rcv_nxt: u64,
    /// Out-of-order ranges above `rcv_nxt`, start -> end, disjoint and merged.
    ooo: BTreeMap<u64, u64>,
    final_len: Option<u64>,
}

impl TcpReceiver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rcv_nxt(&self) -> u64 {
        self.rcv_nxt
    }

    pub fn final_len(&self) -> Option<u64> {
        self.final_len
    }

    pub fn set_final(&mut self, len: u64) {
        self.final_len = Some(len);
    }

    pub fn is_complete(&self) -> bool {
        self.final_len.is_some_and(|f| self.rcv_nxt >= f)
    }

    pub fn ooo_bytes(&self) -> u64 {
        self.ooo.iter().map(|(s, e)| e - s).sum()
    }

    pub fn on_data(&mut self, seq: u64, len: u32, fin: bool) -> RecvOutcome {
        let end = seq + len as u64;
        if fin {
            self.final_len = Some(end);
        }
        let before = self.rcv_nxt;
        let duplicate = end <= self.rcv_nxt || self.covered(seq, end);
        if !duplicate {
            self.insert(seq.max(self.rcv_nxt), end);
            if let Some((&s, &e)) = self.ooo.first_key_value() {
                if s <= self.rcv_nxt {
                    self.ooo.remove(&s);
                    self.rcv_nxt = self.rcv_nxt.max(e);
                }
            }
        }
        RecvOutcome {
            delivered: before..self.rcv_nxt,
            cum: self.rcv_nxt,
            sacks: self.sack_blocks(seq),
            duplicate,
        }
    }

    fn covered(&self, start: u64, end: u64) -> bool {
        self.ooo
            .range(..=start)
            .next_back()
            .is_some_and(|(_, &e)| e >= end)
    }

    fn insert(&mut self, mut start: u64, mut end: u64) {
        if let Some((&s, &e)) = self.ooo.range(..=start).next_back() {
            if e >= start {
                start = s;
                end = end.max(e);
                self.ooo.remove(&s);
            }
        }
        let overlapping: Vec<u64> = self.ooo.range(start..=end).map(|(s, _)| *s).collect();
        for s in overlapping {
            let e = self.ooo.remove(&s).expect("listed");
            end = end.max(e);
        }
        self.ooo.insert(start, end);
    }

    /// Block holding the just-received segment first, then the highest others.
    pub fn sack_blocks(&self, last_seq: u64) -> SackBlocks {
        let mut out = SackBlocks::default();
        let first = self
            .ooo
            .range(..=last_seq)
            .next_back()
            .filter(|(_, &e)| e > last_seq)
            .map(|(&s, &e)| (s, e));
        if let Some(b) = first {
            out.push(b);
        }
        for (&s, &e) in self.ooo.iter().rev() {
            if Some((s, e)) == first {
                continue;
            }
            if !out.push((s, e)) {
                break;
            }
        }
        out
    }
}
