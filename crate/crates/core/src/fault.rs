//! Seeded silent-corruption campaigns.
//!
//! A [`FaultCampaign`] is turned into a list of [`FaultEvent`]s against a
//! snapshot of the arena. Each event XORs a multi-bit mask into one word of
//! the backing store, bypassing barriers and signatures, and fires at a
//! trigger point chosen at random among `trigger_points` opportunities. The
//! workload drives the trigger points through a [`TriggerHook`].

use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arena::{Arena, ArenaMap, HavenExtent, HavenHandle, WORD_BYTES};
use crate::{HavenError, Result};

/// Which bytes of the backing store a campaign may hit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FaultTarget {
    /// Any word of the backing store, owned or free.
    WholeArena,
    /// The allocated extent of one haven.
    HavenOnly(HavenHandle),
    /// Pages on the free list.
    NonHaven,
    /// The allocated extent of every live haven, uniformly by size.
    ActiveData,
}

/// How the flipped bits of one fault are laid out in the word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitPattern {
    /// Distinct random bit positions.
    #[default]
    Random,
    /// A run of adjacent bits at a random position.
    Contiguous,
}

/// Configuration of a fault campaign.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultCampaign {
    /// RNG seed; identical seeds and maps give identical plans.
    pub seed: u64,
    /// Faults planned per run.
    pub min_faults: usize,
    /// Smallest number of bits flipped by one fault.
    pub min_bits: u32,
    /// Largest number of bits flipped by one fault.
    pub max_bits: u32,
    /// Bit layout of each fault.
    pub pattern: BitPattern,
    /// Address range under attack.
    pub target: FaultTarget,
    /// Injection opportunities per run.
    pub trigger_points: usize,
}

impl Default for FaultCampaign {
    fn default() -> Self {
        Self {
            seed: 0,
            min_faults: 5,
            min_bits: 1,
            max_bits: 4,
            pattern: BitPattern::Random,
            target: FaultTarget::ActiveData,
            trigger_points: 100,
        }
    }
}

/// One planned corruption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FaultEvent {
    /// Trigger point at which the fault fires.
    pub trigger_index: usize,
    /// Word-aligned offset into the backing store.
    pub byte_offset: usize,
    /// Bits to flip; never zero.
    pub bit_mask: u64,
}

/// Word ranges of the backing store, as `(first word, word count)`.
fn target_ranges(target: &FaultTarget, map: &ArenaMap) -> Vec<(usize, usize)> {
    let wpp = map.page_size / WORD_BYTES;
    match target {
        FaultTarget::WholeArena => alloc::vec![(0, map.total_pages * wpp)],
        FaultTarget::NonHaven => map.free_pages.iter().map(|&p| (p * wpp, wpp)).collect(),
        FaultTarget::HavenOnly(h) => map
            .havens
            .iter()
            .filter(|e| e.haven == *h)
            .flat_map(|e| extent_ranges(e, wpp))
            .collect(),
        FaultTarget::ActiveData => map
            .havens
            .iter()
            .flat_map(|e| extent_ranges(e, wpp))
            .collect(),
    }
}

fn extent_ranges(e: &HavenExtent, wpp: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    let words = e.extent / WORD_BYTES;
    e.pages
        .iter()
        .enumerate()
        .map(move |(i, &page)| (page * wpp, words.saturating_sub(i * wpp).min(wpp)))
        .filter(|&(_, len)| len > 0)
}

fn draw_mask(rng: &mut ChaCha8Rng, bits: u32, pattern: BitPattern) -> u64 {
    match pattern {
        BitPattern::Random => index::sample(rng, 64, bits as usize)
            .iter()
            .fold(0u64, |m, b| m | 1 << b),
        BitPattern::Contiguous => {
            let run = if bits == 64 {
                u64::MAX
            } else {
                (1u64 << bits) - 1
            };
            run << rng.gen_range(0..=64 - bits)
        }
    }
}

/// Expands a campaign into a deterministic, trigger-ordered event list.
pub fn plan_campaign(campaign: &FaultCampaign, map: &ArenaMap) -> Result<Vec<FaultEvent>> {
    if campaign.trigger_points < campaign.min_faults {
        return Err(HavenError::Config("fewer trigger points than faults"));
    }
    if campaign.min_bits == 0 || campaign.min_bits > campaign.max_bits || campaign.max_bits > 64 {
        return Err(HavenError::Config("bits per fault must lie in 1..=64"));
    }
    let ranges = target_ranges(&campaign.target, map);
    let total: usize = ranges.iter().map(|r| r.1).sum();
    if total == 0 {
        return Err(HavenError::Config("fault target range is empty"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(campaign.seed);
    let mut triggers =
        index::sample(&mut rng, campaign.trigger_points, campaign.min_faults).into_vec();
    triggers.sort_unstable();
    let events = triggers
        .into_iter()
        .map(|trigger_index| {
            let mut pick = rng.gen_range(0..total);
            let (start, _) = ranges
                .iter()
                .find(|&&(_, len)| {
                    if pick < len {
                        true
                    } else {
                        pick -= len;
                        false
                    }
                })
                .expect("pick lies inside the target ranges");
            let bits = rng.gen_range(campaign.min_bits..=campaign.max_bits);
            FaultEvent {
                trigger_index,
                byte_offset: (start + pick) * WORD_BYTES,
                bit_mask: draw_mask(&mut rng, bits, campaign.pattern),
            }
        })
        .collect();
    Ok(events)
}

/// Per-trial seeds derived from a master seed. Trial `k` always gets the
/// same seed for a given master seed, whatever `count` is.
pub fn trial_seeds(master_seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    (0..count).map(|_| rng.next_u64()).collect()
}

/// Applies one event directly to the backing store. No barrier runs and no
/// signature changes.
pub fn inject(arena: &mut Arena, event: &FaultEvent) -> Result<()> {
    arena.flip_bits(event.byte_offset, event.bit_mask)
}

/// Called by a workload once per iteration.
pub trait TriggerHook {
    /// One iteration has started; the hook may corrupt the arena.
    fn tick(&mut self, arena: &mut Arena) -> Result<()>;

    /// Faults injected so far.
    fn realized(&self) -> usize {
        0
    }
}

/// Hook that never injects.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoFaults;

impl TriggerHook for NoFaults {
    fn tick(&mut self, _arena: &mut Arena) -> Result<()> {
        Ok(())
    }
}

/// Fires planned events as their trigger points are reached.
///
/// Every `stride` ticks form one trigger point; with the default stride of
/// one, trigger point `k` is the start of iteration `k`.
#[derive(Debug, Clone)]
pub struct FaultSchedule {
    events: Vec<FaultEvent>,
    stride: usize,
    ticks: usize,
    next: usize,
}

impl FaultSchedule {
    /// Schedule firing at every tick.
    pub fn new(mut events: Vec<FaultEvent>) -> Self {
        events.sort_by_key(|e| e.trigger_index);
        Self {
            events,
            stride: 1,
            ticks: 0,
            next: 0,
        }
    }

    /// One trigger point every `stride` ticks.
    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride.max(1);
        self
    }

    /// Events planned.
    pub fn planned(&self) -> usize {
        self.events.len()
    }

    /// Planned events that never fired.
    pub fn shortfall(&self) -> usize {
        self.events.len() - self.next
    }

    /// Events fired so far, in order.
    pub fn fired(&self) -> &[FaultEvent] {
        &self.events[..self.next]
    }
}

impl TriggerHook for FaultSchedule {
    fn tick(&mut self, arena: &mut Arena) -> Result<()> {
        let tick = self.ticks;
        self.ticks += 1;
        if !tick.is_multiple_of(self.stride) {
            return Ok(());
        }
        let trigger = tick / self.stride;
        while let Some(event) = self.events.get(self.next) {
            if event.trigger_index > trigger {
                break;
            }
            inject(arena, event)?;
            self.next += 1;
        }
        Ok(())
    }

    fn realized(&self) -> usize {
        self.next
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Protection;

    fn arena_with_two_havens() -> (Arena, HavenHandle, HavenHandle) {
        let mut arena = Arena::new(512, 16).unwrap();
        let a = arena.create(Protection::Parity);
        let b = arena.create(Protection::None);
        arena.alloc(a, 1000).unwrap();
        arena.alloc(b, 3000).unwrap();
        (arena, a, b)
    }

    #[test]
    fn same_seed_same_plan() {
        let (arena, _, _) = arena_with_two_havens();
        let c = FaultCampaign {
            seed: 42,
            ..Default::default()
        };
        let p1 = plan_campaign(&c, &arena.map()).unwrap();
        let p2 = plan_campaign(&c, &arena.map()).unwrap();
        assert_eq!(p1, p2);
        let other = plan_campaign(&FaultCampaign { seed: 43, ..c }, &arena.map()).unwrap();
        assert_ne!(p1, other);
    }

    #[test]
    fn plan_shape() {
        let (arena, _, _) = arena_with_two_havens();
        let c = FaultCampaign {
            seed: 7,
            min_faults: 5,
            trigger_points: 100,
            ..Default::default()
        };
        let plan = plan_campaign(&c, &arena.map()).unwrap();
        assert_eq!(plan.len(), 5);
        assert!(plan
            .windows(2)
            .all(|w| w[0].trigger_index < w[1].trigger_index));
        for e in &plan {
            assert!(e.trigger_index < 100);
            assert_ne!(e.bit_mask, 0);
            assert!((1..=4).contains(&e.bit_mask.count_ones()));
            assert_eq!(e.byte_offset % WORD_BYTES, 0);
        }
    }

    #[test]
    fn haven_only_stays_inside_extent() {
        let (arena, a, _) = arena_with_two_havens();
        let allowed: Vec<usize> = (0..1000 / 8 * 8)
            .step_by(8)
            .map(|o| arena.physical_offset(a, o).unwrap())
            .collect();
        for seed in 0..50 {
            let c = FaultCampaign {
                seed,
                target: FaultTarget::HavenOnly(a),
                ..Default::default()
            };
            for e in plan_campaign(&c, &arena.map()).unwrap() {
                assert!(allowed.contains(&e.byte_offset), "{e:?}");
            }
        }
    }

    #[test]
    fn non_haven_hits_free_pages_only() {
        let (arena, _, _) = arena_with_two_havens();
        let free: Vec<usize> = arena.free_list().collect();
        let c = FaultCampaign {
            target: FaultTarget::NonHaven,
            ..Default::default()
        };
        for e in plan_campaign(&c, &arena.map()).unwrap() {
            assert!(free.contains(&(e.byte_offset / 512)));
        }
    }

    #[test]
    fn empty_target_is_a_config_error() {
        let mut arena = Arena::new(512, 1).unwrap();
        let h = arena.create(Protection::Parity);
        let c = FaultCampaign {
            target: FaultTarget::HavenOnly(h),
            ..Default::default()
        };
        assert!(matches!(
            plan_campaign(&c, &arena.map()),
            Err(HavenError::Config(_))
        ));
        arena.alloc(h, 512).unwrap();
        let c = FaultCampaign {
            target: FaultTarget::NonHaven,
            ..Default::default()
        };
        assert!(matches!(
            plan_campaign(&c, &arena.map()),
            Err(HavenError::Config(_))
        ));
    }

    #[test]
    fn too_few_trigger_points() {
        let (arena, _, _) = arena_with_two_havens();
        let c = FaultCampaign {
            min_faults: 5,
            trigger_points: 4,
            ..Default::default()
        };
        assert!(plan_campaign(&c, &arena.map()).is_err());
        let c = FaultCampaign {
            min_bits: 0,
            ..Default::default()
        };
        assert!(plan_campaign(&c, &arena.map()).is_err());
    }

    #[test]
    fn contiguous_masks_are_runs() {
        let (arena, _, _) = arena_with_two_havens();
        let c = FaultCampaign {
            pattern: BitPattern::Contiguous,
            min_bits: 3,
            max_bits: 3,
            trigger_points: 500,
            min_faults: 200,
            ..Default::default()
        };
        for e in plan_campaign(&c, &arena.map()).unwrap() {
            let m = e.bit_mask >> e.bit_mask.trailing_zeros();
            assert_eq!(m, 0b111);
        }
    }

    #[test]
    fn odd_and_even_masks_against_scrub() {
        let mut arena = Arena::new(512, 2).unwrap();
        let h = arena.create(Protection::Parity);
        arena.alloc(h, 64).unwrap();
        for i in 0..8 {
            arena.write(h, i * 8, 1000 + i as u64).unwrap();
        }
        let at = arena.physical_offset(h, 16).unwrap();
        inject(
            &mut arena,
            &FaultEvent {
                trigger_index: 0,
                byte_offset: at,
                bit_mask: 0b11,
            },
        )
        .unwrap();
        assert!(arena.scrub(h).unwrap().is_clean());
        inject(
            &mut arena,
            &FaultEvent {
                trigger_index: 0,
                byte_offset: at,
                bit_mask: 0b11,
            },
        )
        .unwrap();
        inject(
            &mut arena,
            &FaultEvent {
                trigger_index: 0,
                byte_offset: at,
                bit_mask: 0b1,
            },
        )
        .unwrap();
        assert_eq!(arena.scrub(h).unwrap().recovered, [(2, 1002)]);
    }

    #[test]
    fn free_page_fault_leaves_havens_clean() {
        let mut arena = Arena::new(512, 4).unwrap();
        let h = arena.create(Protection::Parity);
        arena.alloc(h, 512).unwrap();
        let free = arena.free_list().next().unwrap();
        inject(
            &mut arena,
            &FaultEvent {
                trigger_index: 0,
                byte_offset: free * 512 + 8,
                bit_mask: 1,
            },
        )
        .unwrap();
        assert!(arena.scrub(h).unwrap().is_clean());
    }

    #[test]
    fn trial_seeds_are_prefix_stable() {
        let short = trial_seeds(9, 3);
        let long = trial_seeds(9, 10);
        assert_eq!(short[..], long[..3]);
        assert_ne!(trial_seeds(10, 3), short);
    }

    #[test]
    fn inject_out_of_range() {
        let mut arena = Arena::new(512, 1).unwrap();
        let e = FaultEvent {
            trigger_index: 0,
            byte_offset: 512,
            bit_mask: 1,
        };
        assert_eq!(
            inject(&mut arena, &e),
            Err(HavenError::InjectOutOfRange {
                offset: 512,
                len: 512
            })
        );
    }

    #[test]
    fn schedule_fires_at_trigger_points() {
        let mut arena = Arena::new(512, 1).unwrap();
        let events: Vec<FaultEvent> = [3, 41, 77, 80, 95]
            .into_iter()
            .map(|t| FaultEvent {
                trigger_index: t,
                byte_offset: 8 * (t % 64),
                bit_mask: 1,
            })
            .collect();
        let mut schedule = FaultSchedule::new(events);
        let mut fired_at = Vec::new();
        for tick in 0..100 {
            let before = schedule.realized();
            schedule.tick(&mut arena).unwrap();
            if schedule.realized() > before {
                fired_at.push(tick);
            }
        }
        assert_eq!(fired_at, [3, 41, 77, 80, 95]);
        assert_eq!(schedule.shortfall(), 0);
    }

    #[test]
    fn schedule_stride_and_shortfall() {
        let mut arena = Arena::new(512, 1).unwrap();
        let events = alloc::vec![
            FaultEvent {
                trigger_index: 1,
                byte_offset: 0,
                bit_mask: 1
            },
            FaultEvent {
                trigger_index: 9,
                byte_offset: 8,
                bit_mask: 1
            },
        ];
        let mut schedule = FaultSchedule::new(events.clone()).with_stride(4);
        for _ in 0..8 {
            schedule.tick(&mut arena).unwrap();
        }
        // tick 4 is trigger point 1; trigger point 9 would need 37 ticks
        assert_eq!(schedule.realized(), 1);
        assert_eq!(schedule.shortfall(), 1);
        let untouched = FaultSchedule::new(events);
        assert_eq!(untouched.realized(), 0);
        assert_eq!(untouched.shortfall(), 2);
    }
}
