//! Parity-based detection and single-erasure correction over haven words.
//!
//! Every tracked word `w[i]` has a detection bit `parity(w[i])`, packed 64
//! per signature word. Two correction signatures are kept per haven: `s1`
//! accumulates every value written and `s2` every value overwritten, so that
//! `s1 ^ s2` always equals the XOR of the current contents. A word whose
//! parity no longer matches is rebuilt as `s1 ^ s2 ^ (XOR of all other
//! words)`.
//!
//! Detection on a read costs one popcount. Recovery and scrubbing are linear
//! in the number of tracked words. Flipping an even number of bits in a word
//! preserves its parity and is not detected.

use alloc::vec::Vec;

use crate::arena::{Arena, HavenHandle, Mode, Protection, WORD_BYTES};
use crate::{HavenError, Result};

/// Parity of a word: XOR of its 64 bits.
#[inline]
pub fn parity_bit(word: u64) -> bool {
    word.count_ones() & 1 == 1
}

/// Detection bitmap and correction signatures of one haven.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParityState {
    s1: u64,
    s2: u64,
    detect: Vec<u64>,
    tracked: usize,
}

impl ParityState {
    pub(crate) fn new() -> Self {
        Self::default()
    }

    /// XOR of every value written.
    pub fn s1(&self) -> u64 {
        self.s1
    }

    /// XOR of every value overwritten.
    pub fn s2(&self) -> u64 {
        self.s2
    }

    /// Number of words under protection.
    pub fn tracked(&self) -> usize {
        self.tracked
    }

    /// Stored detection bit of word `index`.
    pub fn bit(&self, index: usize) -> bool {
        self.detect[index / 64] >> (index % 64) & 1 == 1
    }

    /// Words of protection state: the signature pair plus one detection word
    /// per 64 tracked words.
    pub fn signature_words(&self) -> usize {
        2 + self.tracked.div_ceil(64)
    }

    fn set_bit(&mut self, index: usize, value: bool) {
        let word = &mut self.detect[index / 64];
        let mask = 1u64 << (index % 64);
        if value {
            *word |= mask;
        } else {
            *word &= !mask;
        }
    }

    /// Registers zero-valued words up to `tracked`. Zero has even parity and
    /// leaves `s1` unchanged.
    pub(crate) fn grow(&mut self, tracked: usize) {
        self.tracked = tracked;
        self.detect.resize(tracked.div_ceil(64), 0);
    }

    fn record_write(&mut self, index: usize, old: u64, new: u64) {
        self.s1 ^= new;
        self.s2 ^= old;
        self.set_bit(index, parity_bit(new));
    }
}

/// Outcome of a full-region parity sweep.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScrubReport {
    /// Word indices whose parity did not match the detection bit.
    pub violations: Vec<usize>,
    /// Words rebuilt, as `(index, restored value)`.
    pub recovered: Vec<(usize, u64)>,
    /// Set when two or more words were bad; nothing was modified.
    pub unrecoverable: bool,
}

impl ScrubReport {
    /// No violation found.
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Space cost of protecting one haven.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Overhead {
    /// Signature words kept (S1, S2 and detection words).
    pub signature_words: usize,
    /// The same in bytes.
    pub bytes: usize,
}

impl Arena {
    fn guarded(&self, haven: HavenHandle) -> bool {
        let slot = &self.havens[haven.id() as usize];
        slot.mode == Mode::Robust && slot.parity.is_some()
    }

    fn parity(&self, haven: HavenHandle) -> &ParityState {
        self.havens[haven.id() as usize]
            .parity
            .as_ref()
            .expect("guarded haven carries parity state")
    }

    fn parity_mut(&mut self, haven: HavenHandle) -> &mut ParityState {
        self.havens[haven.id() as usize]
            .parity
            .as_mut()
            .expect("guarded haven carries parity state")
    }

    /// Read barrier. Under robust parity the stored word is checked against
    /// its detection bit; on a mismatch the word is rebuilt in place and the
    /// rebuilt value returned.
    pub fn read(&mut self, haven: HavenHandle, offset: usize) -> Result<u64> {
        let index = self.check_word(haven, offset)?;
        let phys = self.phys_index(haven, index);
        let value = self.load(phys);
        if !self.guarded(haven) || parity_bit(value) == self.parity(haven).bit(index) {
            return Ok(value);
        }
        self.havens[haven.id() as usize].stats.detections += 1;
        self.rebuild(haven, index)
    }

    /// Write barrier. Under robust parity `s1` absorbs the new value, `s2`
    /// the value it replaces, and the detection bit is refreshed. A stale
    /// word with bad parity is rebuilt first so that `s2` receives the true
    /// old value.
    pub fn write(&mut self, haven: HavenHandle, offset: usize, value: u64) -> Result<()> {
        let index = self.check_word(haven, offset)?;
        let phys = self.phys_index(haven, index);
        if self.guarded(haven) {
            let mut old = self.load(phys);
            if parity_bit(old) != self.parity(haven).bit(index) {
                self.havens[haven.id() as usize].stats.detections += 1;
                old = self.rebuild(haven, index)?;
            }
            self.parity_mut(haven).record_write(index, old, value);
        }
        self.store(phys, value);
        Ok(())
    }

    /// [`Arena::read`] reinterpreted as an `f64`.
    pub fn read_f64(&mut self, haven: HavenHandle, offset: usize) -> Result<f64> {
        self.read(haven, offset).map(f64::from_bits)
    }

    /// [`Arena::write`] of an `f64` bit pattern.
    pub fn write_f64(&mut self, haven: HavenHandle, offset: usize, value: f64) -> Result<()> {
        self.write(haven, offset, value.to_bits())
    }

    /// Reads an arbitrary byte range through the word barriers.
    pub fn read_bytes(&mut self, haven: HavenHandle, offset: usize, buf: &mut [u8]) -> Result<()> {
        self.check_range(haven, offset, buf.len())?;
        let mut done = 0;
        while done < buf.len() {
            let at = offset + done;
            let word_start = at - at % WORD_BYTES;
            let skip = at - word_start;
            let bytes = self.read(haven, word_start)?.to_le_bytes();
            let take = (WORD_BYTES - skip).min(buf.len() - done);
            buf[done..done + take].copy_from_slice(&bytes[skip..skip + take]);
            done += take;
        }
        Ok(())
    }

    /// Writes an arbitrary byte range by read-modify-writing whole words
    /// through the barriers.
    pub fn write_bytes(&mut self, haven: HavenHandle, offset: usize, data: &[u8]) -> Result<()> {
        self.check_range(haven, offset, data.len())?;
        let mut done = 0;
        while done < data.len() {
            let at = offset + done;
            let word_start = at - at % WORD_BYTES;
            let skip = at - word_start;
            let take = (WORD_BYTES - skip).min(data.len() - done);
            let mut bytes = if take == WORD_BYTES {
                [0; WORD_BYTES]
            } else {
                self.read(haven, word_start)?.to_le_bytes()
            };
            bytes[skip..skip + take].copy_from_slice(&data[done..done + take]);
            self.write(haven, word_start, u64::from_le_bytes(bytes))?;
            done += take;
        }
        Ok(())
    }

    fn check_range(&self, haven: HavenHandle, offset: usize, len: usize) -> Result<()> {
        let extent = self.slot(haven)?.cursor;
        if offset.checked_add(len).is_none_or(|end| end > extent) {
            return Err(HavenError::OutOfBounds {
                offset,
                len,
                extent,
            });
        }
        Ok(())
    }

    /// Rebuilds word `index` from the correction signatures and every other
    /// tracked word. Fails without touching memory if another word also
    /// violates parity.
    pub fn recover(&mut self, haven: HavenHandle, index: usize) -> Result<u64> {
        let slot = self.slot(haven)?;
        if !self.guarded(haven) {
            return Err(HavenError::NotProtected(haven));
        }
        if index >= slot.cursor / WORD_BYTES {
            return Err(HavenError::OutOfBounds {
                offset: index * WORD_BYTES,
                len: WORD_BYTES,
                extent: slot.cursor,
            });
        }
        self.rebuild(haven, index)
    }

    fn rebuild(&mut self, haven: HavenHandle, index: usize) -> Result<u64> {
        let parity = self.parity(haven);
        let mut fold = 0u64;
        let mut second = None;
        self.for_each_word(haven, parity.tracked, |j, w| {
            if j == index {
                return true;
            }
            if parity_bit(w) != parity.bit(j) {
                second = Some(j);
                return false;
            }
            fold ^= w;
            true
        });
        let value = parity.s1 ^ parity.s2 ^ fold;

        let slot = &mut self.havens[haven.id() as usize];
        if let Some(j) = second {
            slot.stats.unrecoverables += 1;
            return Err(HavenError::Unrecoverable {
                haven,
                first: index.min(j),
                second: index.max(j),
            });
        }
        slot.stats.recoveries += 1;
        self.parity_mut(haven).set_bit(index, parity_bit(value));
        let phys = self.phys_index(haven, index);
        self.store(phys, value);
        Ok(value)
    }

    /// Checks every tracked word. A single violation is repaired; two or
    /// more leave memory untouched and mark the report unrecoverable.
    /// Havens that are relaxed or unprotected scrub clean.
    pub fn scrub(&mut self, haven: HavenHandle) -> Result<ScrubReport> {
        self.slot(haven)?;
        let mut report = ScrubReport::default();
        if !self.guarded(haven) {
            return Ok(report);
        }

        let parity = self.parity(haven);
        let mut fold = 0u64;
        self.for_each_word(haven, parity.tracked, |j, w| {
            if parity_bit(w) != parity.bit(j) {
                report.violations.push(j);
            } else {
                fold ^= w;
            }
            true
        });
        let value = parity.s1 ^ parity.s2 ^ fold;

        let stats = &mut self.havens[haven.id() as usize].stats;
        stats.detections += report.violations.len() as u64;
        match report.violations[..] {
            [] => {}
            [index] => {
                stats.recoveries += 1;
                self.parity_mut(haven).set_bit(index, parity_bit(value));
                let phys = self.phys_index(haven, index);
                self.store(phys, value);
                report.recovered.push((index, value));
            }
            _ => {
                stats.unrecoverables += 1;
                report.unrecoverable = true;
            }
        }
        Ok(report)
    }

    /// Turns the barriers into plain loads and stores. Signatures are frozen.
    pub fn relax(&mut self, haven: HavenHandle) -> Result<()> {
        self.slot(haven)?;
        self.havens[haven.id() as usize].mode = Mode::Relaxed;
        Ok(())
    }

    /// Re-imposes protection, adopting the current contents as ground truth:
    /// detection bits are recomputed, `s1` becomes the XOR of all words and
    /// `s2` is cleared.
    pub fn robust(&mut self, haven: HavenHandle) -> Result<()> {
        self.slot(haven)?;
        self.havens[haven.id() as usize].mode = Mode::Robust;
        let Some(tracked) = self.havens[haven.id() as usize]
            .parity
            .as_ref()
            .map(|p| p.tracked)
        else {
            return Ok(());
        };
        let mut rebuilt = ParityState::new();
        rebuilt.grow(tracked);
        self.for_each_word(haven, tracked, |j, w| {
            rebuilt.s1 ^= w;
            rebuilt.set_bit(j, parity_bit(w));
            true
        });
        self.havens[haven.id() as usize].parity = Some(rebuilt);
        Ok(())
    }

    /// Signature words kept for the haven; zero for unprotected havens.
    pub fn protection_overhead(&self, haven: HavenHandle) -> Result<Overhead> {
        let slot = self.slot(haven)?;
        let signature_words = match (slot.scheme, &slot.parity) {
            (Protection::Parity, Some(p)) => p.signature_words(),
            _ => 0,
        };
        Ok(Overhead {
            signature_words,
            bytes: signature_words * WORD_BYTES,
        })
    }

    /// Protection state of a parity haven, `None` for unprotected havens.
    pub fn parity_state(&self, haven: HavenHandle) -> Result<Option<&ParityState>> {
        Ok(self.slot(haven)?.parity.as_ref())
    }
}
