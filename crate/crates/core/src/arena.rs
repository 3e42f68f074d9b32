//! The page arena and haven lifecycle.
//!
//! The arena is a self-contained store of `total_pages` pages of
//! `page_size` bytes. Havens own an ordered list of pages and carve blocks
//! out of them with a bump cursor. There is no per-block free: destroying a
//! haven hands every page back to the free list in one step.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::parity::ParityState;
use crate::{HavenError, Result};

/// Bytes per protected word.
pub const WORD_BYTES: usize = 8;

/// Smallest page size accepted: 64 words, so one detection word covers a page.
const MIN_PAGE_SIZE: usize = 64 * WORD_BYTES;

/// Opaque identifier of a haven within one arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HavenHandle(u32);

impl HavenHandle {
    /// Raw identifier.
    pub fn id(self) -> u32 {
        self.0
    }
}

/// Protection scheme applied to a haven.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Protection {
    /// Plain loads and stores.
    None,
    /// Per-word parity detection with S1/S2 XOR correction signatures.
    Parity,
}

/// Whether barriers currently enforce the scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Barriers maintain and check protection state.
    Robust,
    /// Barriers are plain loads and stores; signatures are frozen.
    Relaxed,
}

/// A block carved out of a haven.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockRef {
    /// Owning haven.
    pub haven: HavenHandle,
    /// Byte offset from the start of the region.
    pub offset: usize,
    /// Length in bytes, a multiple of [`WORD_BYTES`].
    pub length: usize,
}

impl BlockRef {
    /// Byte offset of the `index`-th word of the block.
    pub fn word(&self, index: usize) -> usize {
        self.offset + index * WORD_BYTES
    }

    /// Number of words in the block.
    pub fn words(&self) -> usize {
        self.length / WORD_BYTES
    }
}

/// Detection and recovery counters of one haven.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HavenStats {
    /// Parity violations observed by barriers or scrubs.
    pub detections: u64,
    /// Words rebuilt from the correction signatures.
    pub recoveries: u64,
    /// Recoveries abandoned because a second word was also bad.
    pub unrecoverables: u64,
}

impl core::ops::AddAssign for HavenStats {
    fn add_assign(&mut self, rhs: Self) {
        self.detections += rhs.detections;
        self.recoveries += rhs.recoveries;
        self.unrecoverables += rhs.unrecoverables;
    }
}

#[derive(Debug)]
pub(crate) struct HavenSlot {
    pub(crate) pages: Vec<usize>,
    pub(crate) scheme: Protection,
    pub(crate) mode: Mode,
    pub(crate) cursor: usize,
    pub(crate) live: bool,
    pub(crate) parity: Option<ParityState>,
    pub(crate) stats: HavenStats,
}

/// Page-granular extent of one live haven, as seen by the fault planner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HavenExtent {
    /// The haven.
    pub haven: HavenHandle,
    /// Pages owned, in region order.
    pub pages: Vec<usize>,
    /// Allocated bytes.
    pub extent: usize,
}

/// Snapshot of page ownership used to plan fault campaigns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArenaMap {
    /// Page size in bytes.
    pub page_size: usize,
    /// Number of pages in the backing store.
    pub total_pages: usize,
    /// Every live haven.
    pub havens: Vec<HavenExtent>,
    /// Pages on the free list.
    pub free_pages: Vec<usize>,
}

/// A pool of fixed-size pages backing every haven.
#[derive(Debug)]
pub struct Arena {
    page_size: usize,
    word_shift: u32,
    word_mask: usize,
    backing: Vec<u64>,
    free: VecDeque<usize>,
    pub(crate) havens: Vec<HavenSlot>,
}

impl Arena {
    /// Creates an arena of `total_pages` zero-filled pages.
    ///
    /// `page_size` must be a power of two and at least 512 bytes.
    pub fn new(page_size: usize, total_pages: usize) -> Result<Self> {
        if !page_size.is_power_of_two() {
            return Err(HavenError::Config("page size must be a power of two"));
        }
        if page_size < MIN_PAGE_SIZE {
            return Err(HavenError::Config("page size must be at least 512 bytes"));
        }
        if total_pages == 0 {
            return Err(HavenError::Config("arena needs at least one page"));
        }
        let words_per_page = page_size / WORD_BYTES;
        let words = words_per_page
            .checked_mul(total_pages)
            .ok_or(HavenError::Config("arena size overflows"))?;
        Ok(Self {
            page_size,
            word_shift: words_per_page.trailing_zeros(),
            word_mask: words_per_page - 1,
            backing: vec![0; words],
            free: (0..total_pages).collect(),
            havens: Vec::new(),
        })
    }

    /// Page size in bytes.
    pub fn page_size(&self) -> usize {
        self.page_size
    }

    /// Number of pages in the backing store.
    pub fn total_pages(&self) -> usize {
        self.backing.len() >> self.word_shift
    }

    /// Size of the backing store in bytes.
    pub fn backing_bytes(&self) -> usize {
        self.backing.len() * WORD_BYTES
    }

    /// Number of pages on the free list.
    pub fn free_pages(&self) -> usize {
        self.free.len()
    }

    /// Free list in allocation order.
    pub fn free_list(&self) -> impl Iterator<Item = usize> + '_ {
        self.free.iter().copied()
    }

    /// Creates an empty haven. No pages are taken until the first allocation.
    pub fn create(&mut self, scheme: Protection) -> HavenHandle {
        let handle = HavenHandle(self.havens.len() as u32);
        self.havens.push(HavenSlot {
            pages: Vec::new(),
            scheme,
            mode: Mode::Robust,
            cursor: 0,
            live: true,
            parity: match scheme {
                Protection::Parity => Some(ParityState::new()),
                Protection::None => None,
            },
            stats: HavenStats::default(),
        });
        handle
    }

    /// Bump-allocates `nbytes` (rounded up to whole words) at the end of the
    /// region, pulling pages off the free list as needed. The new words read
    /// as zero and are registered with the protection scheme as such.
    pub fn alloc(&mut self, haven: HavenHandle, nbytes: usize) -> Result<BlockRef> {
        if nbytes == 0 {
            return Err(HavenError::ZeroSizedAlloc);
        }
        let page_size = self.page_size;
        let free = self.free.len();
        let slot = self.slot(haven)?;
        let length = nbytes
            .checked_next_multiple_of(WORD_BYTES)
            .ok_or(HavenError::Config("allocation size overflows"))?;
        let offset = slot.cursor;
        let end = offset + length;
        let needed = end.div_ceil(page_size).saturating_sub(slot.pages.len());
        if needed > free {
            return Err(HavenError::OutOfMemory { needed, free });
        }

        let taken: Vec<usize> = self.free.drain(..needed).collect();
        let slot = &mut self.havens[haven.0 as usize];
        slot.pages.extend_from_slice(&taken);
        slot.cursor = end;
        if let Some(parity) = slot.parity.as_mut() {
            parity.grow(end / WORD_BYTES);
        }
        // Words may hold stale data from a previous owner or from faults
        // injected into slack space.
        for w in offset / WORD_BYTES..end / WORD_BYTES {
            let phys = self.phys_index(haven, w);
            self.backing[phys] = 0;
        }
        Ok(BlockRef {
            haven,
            offset,
            length,
        })
    }

    /// Releases every page of the haven and discards its protection state.
    pub fn destroy(&mut self, haven: HavenHandle) -> Result<()> {
        self.slot(haven)?;
        let slot = &mut self.havens[haven.0 as usize];
        slot.live = false;
        slot.cursor = 0;
        slot.parity = None;
        let pages = core::mem::take(&mut slot.pages);
        self.free.extend(pages);
        Ok(())
    }

    /// Bytes allocated in the haven so far.
    pub fn extent(&self, haven: HavenHandle) -> Result<usize> {
        Ok(self.slot(haven)?.cursor)
    }

    /// Pages owned by the haven, in region order.
    pub fn pages(&self, haven: HavenHandle) -> Result<&[usize]> {
        Ok(&self.slot(haven)?.pages)
    }

    /// Protection scheme of the haven.
    pub fn scheme(&self, haven: HavenHandle) -> Result<Protection> {
        Ok(self.slot(haven)?.scheme)
    }

    /// Current mode of the haven.
    pub fn mode(&self, haven: HavenHandle) -> Result<Mode> {
        Ok(self.slot(haven)?.mode)
    }

    /// Detection counters of the haven.
    pub fn stats(&self, haven: HavenHandle) -> Result<HavenStats> {
        Ok(self.slot(haven)?.stats)
    }

    /// Whether the handle refers to a live haven.
    pub fn is_live(&self, haven: HavenHandle) -> bool {
        self.havens
            .get(haven.0 as usize)
            .is_some_and(|slot| slot.live)
    }

    /// Handles of all live havens, in creation order.
    pub fn live_havens(&self) -> impl Iterator<Item = HavenHandle> + '_ {
        self.havens
            .iter()
            .enumerate()
            .filter(|(_, slot)| slot.live)
            .map(|(i, _)| HavenHandle(i as u32))
    }

    /// Ownership snapshot for fault planning.
    pub fn map(&self) -> ArenaMap {
        ArenaMap {
            page_size: self.page_size,
            total_pages: self.total_pages(),
            havens: self
                .live_havens()
                .map(|h| {
                    let slot = &self.havens[h.0 as usize];
                    HavenExtent {
                        haven: h,
                        pages: slot.pages.clone(),
                        extent: slot.cursor,
                    }
                })
                .collect(),
            free_pages: self.free.iter().copied().collect(),
        }
    }

    /// Offset in the backing store of the word at region byte `offset`.
    pub fn physical_offset(&self, haven: HavenHandle, offset: usize) -> Result<usize> {
        self.check_word(haven, offset)?;
        Ok(self.phys_index(haven, offset / WORD_BYTES) * WORD_BYTES)
    }

    /// Reads a word of the backing store without any barrier.
    pub fn peek(&self, byte_offset: usize) -> Option<u64> {
        if !byte_offset.is_multiple_of(WORD_BYTES) {
            return None;
        }
        self.backing.get(byte_offset / WORD_BYTES).copied()
    }

    /// XORs `mask` into the backing word containing `byte_offset`, bypassing
    /// every barrier and signature.
    pub fn flip_bits(&mut self, byte_offset: usize, mask: u64) -> Result<()> {
        let len = self.backing_bytes();
        let word =
            self.backing
                .get_mut(byte_offset / WORD_BYTES)
                .ok_or(HavenError::InjectOutOfRange {
                    offset: byte_offset,
                    len,
                })?;
        *word ^= mask;
        Ok(())
    }

    pub(crate) fn slot(&self, haven: HavenHandle) -> Result<&HavenSlot> {
        let slot = self
            .havens
            .get(haven.0 as usize)
            .ok_or(HavenError::UnknownHaven(haven))?;
        if !slot.live {
            return Err(HavenError::UseAfterDestroy(haven));
        }
        Ok(slot)
    }

    /// Validates a word access and returns the word index within the region.
    pub(crate) fn check_word(&self, haven: HavenHandle, offset: usize) -> Result<usize> {
        let slot = self.slot(haven)?;
        if !offset.is_multiple_of(WORD_BYTES) {
            return Err(HavenError::Misaligned { offset });
        }
        if offset
            .checked_add(WORD_BYTES)
            .is_none_or(|end| end > slot.cursor)
        {
            return Err(HavenError::OutOfBounds {
                offset,
                len: WORD_BYTES,
                extent: slot.cursor,
            });
        }
        Ok(offset / WORD_BYTES)
    }

    #[inline]
    pub(crate) fn phys_index(&self, haven: HavenHandle, word: usize) -> usize {
        let pages = &self.havens[haven.0 as usize].pages;
        (pages[word >> self.word_shift] << self.word_shift) | (word & self.word_mask)
    }

    #[inline]
    pub(crate) fn load(&self, phys: usize) -> u64 {
        self.backing[phys]
    }

    #[inline]
    pub(crate) fn store(&mut self, phys: usize, value: u64) {
        self.backing[phys] = value;
    }

    /// Words per page.
    pub(crate) fn words_per_page(&self) -> usize {
        self.word_mask + 1
    }

    /// Visits the `words` first words of the haven in region order, page by
    /// page, as `(word_index, value)`.
    pub(crate) fn for_each_word(
        &self,
        haven: HavenHandle,
        words: usize,
        mut f: impl FnMut(usize, u64) -> bool,
    ) {
        let wpp = self.words_per_page();
        let pages = &self.havens[haven.0 as usize].pages;
        let mut index = 0;
        for &page in pages {
            if index >= words {
                break;
            }
            let take = wpp.min(words - index);
            let base = page * wpp;
            for (k, &w) in self.backing[base..base + take].iter().enumerate() {
                if !f(index + k, w) {
                    return;
                }
            }
            index += take;
        }
    }
}
