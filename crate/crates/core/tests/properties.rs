use std::collections::HashSet;

use havens_core::fault::{inject, plan_campaign, BitPattern, FaultCampaign, FaultTarget};
use havens_core::{Arena, HavenError, HavenHandle, Protection, WORD_BYTES};
use proptest::prelude::*;

const PAGE: usize = 512;
const WPP: usize = PAGE / WORD_BYTES;

fn fold(words: &[u64]) -> u64 {
    words.iter().fold(0, |acc, w| acc ^ w)
}

fn odd(w: u64) -> bool {
    w.count_ones() % 2 == 1
}

/// A parity haven of `values.len()` words holding `values`.
fn filled(values: &[u64]) -> (Arena, HavenHandle) {
    let pages = (values.len() * WORD_BYTES).div_ceil(PAGE).max(1);
    let mut arena = Arena::new(PAGE, pages).unwrap();
    let h = arena.create(Protection::Parity);
    arena.alloc(h, values.len() * WORD_BYTES).unwrap();
    for (i, &v) in values.iter().enumerate() {
        arena.write(h, i * WORD_BYTES, v).unwrap();
    }
    (arena, h)
}

fn corrupt(arena: &mut Arena, h: HavenHandle, word: usize, mask: u64) {
    let phys = arena.physical_offset(h, word * WORD_BYTES).unwrap();
    arena.flip_bits(phys, mask).unwrap();
}

fn mask_with_weight(bits: &[u8]) -> u64 {
    bits.iter().fold(0, |m, &b| m | 1 << b)
}

fn values(max: usize) -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(any::<u64>(), 1..=max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn signatures_track_the_contents(
        initial in values(300),
        writes in prop::collection::vec((any::<prop::sample::Index>(), any::<u64>()), 0..200),
    ) {
        let (mut arena, h) = filled(&initial);
        let mut shadow = initial.clone();
        for (at, v) in writes {
            let i = at.index(shadow.len());
            arena.write(h, i * WORD_BYTES, v).unwrap();
            shadow[i] = v;
            let p = arena.parity_state(h).unwrap().unwrap();
            prop_assert_eq!(p.s1() ^ p.s2(), fold(&shadow));
            prop_assert_eq!(p.bit(i), odd(v));
        }
        for (i, &v) in shadow.iter().enumerate() {
            prop_assert_eq!(arena.read(h, i * WORD_BYTES).unwrap(), v);
        }
    }

    #[test]
    fn odd_flips_are_detected_and_repaired_exactly(
        initial in values(600),
        at in any::<prop::sample::Index>(),
        bits in prop::sample::subsequence((0u8..64).collect::<Vec<_>>(), 1..=7)
            .prop_filter("odd weight", |b| b.len() % 2 == 1),
        via_scrub in any::<bool>(),
    ) {
        let (mut arena, h) = filled(&initial);
        let i = at.index(initial.len());
        corrupt(&mut arena, h, i, mask_with_weight(&bits));
        if via_scrub {
            let report = arena.scrub(h).unwrap();
            prop_assert_eq!(report.violations, vec![i]);
            prop_assert_eq!(report.recovered, vec![(i, initial[i])]);
        } else {
            prop_assert_eq!(arena.read(h, i * WORD_BYTES).unwrap(), initial[i]);
        }
        let stats = arena.stats(h).unwrap();
        prop_assert_eq!((stats.detections, stats.recoveries, stats.unrecoverables), (1, 1, 0));
        for (j, &v) in initial.iter().enumerate() {
            prop_assert_eq!(arena.read(h, j * WORD_BYTES).unwrap(), v);
        }
        prop_assert!(arena.scrub(h).unwrap().is_clean());
    }

    #[test]
    fn explicit_recover_restores_any_mask(
        initial in values(300),
        at in any::<prop::sample::Index>(),
        mask in any::<u64>(),
    ) {
        let (mut arena, h) = filled(&initial);
        let i = at.index(initial.len());
        corrupt(&mut arena, h, i, mask);
        prop_assert_eq!(arena.recover(h, i).unwrap(), initial[i]);
        let phys = arena.physical_offset(h, i * WORD_BYTES).unwrap();
        prop_assert_eq!(arena.peek(phys), Some(initial[i]));
    }

    #[test]
    fn even_flips_are_invisible(
        initial in values(300),
        at in any::<prop::sample::Index>(),
        bits in prop::sample::subsequence((0u8..64).collect::<Vec<_>>(), 2..=8)
            .prop_filter("even weight", |b| b.len() % 2 == 0),
    ) {
        let (mut arena, h) = filled(&initial);
        let i = at.index(initial.len());
        let mask = mask_with_weight(&bits);
        corrupt(&mut arena, h, i, mask);
        prop_assert!(arena.scrub(h).unwrap().is_clean());
        prop_assert_eq!(arena.read(h, i * WORD_BYTES).unwrap(), initial[i] ^ mask);
        prop_assert_eq!(arena.stats(h).unwrap().detections, 0);
    }

    #[test]
    fn two_bad_words_never_read_silently_wrong(
        initial in values(600).prop_filter("two words", |v| v.len() >= 2),
        a in any::<prop::sample::Index>(),
        b in any::<prop::sample::Index>(),
        mask_a in any::<u64>().prop_filter("odd", |m| odd(*m)),
        mask_b in any::<u64>().prop_filter("odd", |m| odd(*m)),
    ) {
        let (mut arena, h) = filled(&initial);
        let n = initial.len();
        let i = a.index(n);
        let j = (i + 1 + b.index(n - 1)) % n;
        corrupt(&mut arena, h, i, mask_a);
        corrupt(&mut arena, h, j, mask_b);

        let report = arena.scrub(h).unwrap();
        prop_assert!(report.unrecoverable);
        prop_assert!(report.recovered.is_empty());
        let (lo, hi) = (i.min(j), i.max(j));
        prop_assert_eq!(report.violations, vec![lo, hi]);
        for (k, &v) in initial.iter().enumerate() {
            match arena.read(h, k * WORD_BYTES) {
                Ok(got) => {
                    prop_assert!(k != i && k != j);
                    prop_assert_eq!(got, v);
                }
                Err(HavenError::Unrecoverable { first, second, .. }) => {
                    prop_assert!(k == i || k == j);
                    prop_assert_eq!((first, second), (lo, hi));
                }
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }

    #[test]
    fn overhead_is_two_plus_one_word_per_64(words in 1usize..5000) {
        let mut arena = Arena::new(PAGE, (words * WORD_BYTES).div_ceil(PAGE)).unwrap();
        let h = arena.create(Protection::Parity);
        arena.alloc(h, words * WORD_BYTES).unwrap();
        prop_assert_eq!(arena.protection_overhead(h).unwrap().signature_words, 2 + words.div_ceil(64));
    }

    #[test]
    fn relax_then_robust_adopts_contents(
        initial in values(300),
        writes in prop::collection::vec((any::<prop::sample::Index>(), any::<u64>()), 0..50),
    ) {
        let (mut arena, h) = filled(&initial);
        let mut shadow = initial.clone();
        arena.relax(h).unwrap();
        let frozen = arena.parity_state(h).unwrap().unwrap().clone();
        for (at, v) in writes {
            let i = at.index(shadow.len());
            arena.write(h, i * WORD_BYTES, v).unwrap();
            shadow[i] = v;
        }
        prop_assert_eq!(arena.parity_state(h).unwrap().unwrap(), &frozen);
        prop_assert!(arena.scrub(h).unwrap().is_clean());

        arena.robust(h).unwrap();
        let p = arena.parity_state(h).unwrap().unwrap();
        prop_assert_eq!((p.s1(), p.s2()), (fold(&shadow), 0));
        for (i, &v) in shadow.iter().enumerate() {
            prop_assert_eq!(p.bit(i), odd(v));
        }
        prop_assert!(arena.scrub(h).unwrap().is_clean());
    }
}

#[derive(Debug, Clone)]
enum Op {
    Create(bool),
    Alloc(prop::sample::Index, usize),
    Destroy(prop::sample::Index),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        any::<bool>().prop_map(Op::Create),
        (any::<prop::sample::Index>(), 1usize..3 * PAGE).prop_map(|(h, n)| Op::Alloc(h, n)),
        any::<prop::sample::Index>().prop_map(Op::Destroy),
    ]
}

proptest! {
    #[test]
    fn pages_are_conserved_and_blocks_disjoint(ops in prop::collection::vec(op(), 1..60)) {
        let total = 24;
        let mut arena = Arena::new(PAGE, total).unwrap();
        let mut handles: Vec<HavenHandle> = Vec::new();
        // live blocks as sets of physical words
        let mut blocks: Vec<(HavenHandle, Vec<usize>)> = Vec::new();
        for op in ops {
            match op {
                Op::Create(parity) => handles.push(arena.create(if parity { Protection::Parity } else { Protection::None })),
                Op::Alloc(at, n) if !handles.is_empty() => {
                    let h = handles[at.index(handles.len())];
                    let free = arena.free_pages();
                    match arena.alloc(h, n) {
                        Ok(block) => {
                            prop_assert_eq!(block.length, n.next_multiple_of(WORD_BYTES));
                            prop_assert_eq!(block.offset + block.length, arena.extent(h).unwrap());
                            let words = (0..block.words())
                                .map(|i| arena.physical_offset(h, block.word(i)).unwrap() / WORD_BYTES)
                                .collect();
                            blocks.push((h, words));
                        }
                        Err(HavenError::OutOfMemory { .. }) => prop_assert_eq!(arena.free_pages(), free),
                        Err(HavenError::UseAfterDestroy(_)) => prop_assert!(!arena.is_live(h)),
                        Err(e) => prop_assert!(false, "unexpected error {e}"),
                    }
                }
                Op::Destroy(at) if !handles.is_empty() => {
                    let h = handles[at.index(handles.len())];
                    if arena.is_live(h) {
                        arena.destroy(h).unwrap();
                        blocks.retain(|(owner, _)| *owner != h);
                    } else {
                        prop_assert!(arena.destroy(h).is_err());
                    }
                }
                _ => {}
            }

            let mut seen = HashSet::new();
            let mut used = 0;
            for h in arena.live_havens() {
                let pages = arena.pages(h).unwrap();
                used += pages.len();
                prop_assert_eq!(pages.len(), arena.extent(h).unwrap().div_ceil(PAGE));
                for &p in pages {
                    prop_assert!(seen.insert(p), "page {} owned twice", p);
                }
            }
            for p in arena.free_list() {
                prop_assert!(seen.insert(p), "free page {} also owned", p);
            }
            prop_assert_eq!(used + arena.free_pages(), total);
            prop_assert_eq!(seen.len(), total);

            let mut words = HashSet::new();
            for (_, ws) in &blocks {
                for &w in ws {
                    prop_assert!(w < total * WPP);
                    prop_assert!(words.insert(w), "word {} in two blocks", w);
                }
            }
        }
    }

    #[test]
    fn faults_outside_havens_leave_havens_alone(seed in any::<u64>(), faults in 1usize..20) {
        let mut arena = Arena::new(PAGE, 16).unwrap();
        let mut contents = Vec::new();
        for (k, words) in [70usize, 3, 200].into_iter().enumerate() {
            let h = arena.create(Protection::Parity);
            arena.alloc(h, words * WORD_BYTES).unwrap();
            let vals: Vec<u64> = (0..words as u64).map(|i| i.wrapping_mul(0x9E37_79B9) ^ k as u64).collect();
            for (i, &v) in vals.iter().enumerate() {
                arena.write(h, i * WORD_BYTES, v).unwrap();
            }
            contents.push((h, vals));
        }
        let campaign = FaultCampaign {
            seed,
            min_faults: faults,
            min_bits: 1,
            max_bits: 4,
            pattern: BitPattern::Random,
            target: FaultTarget::NonHaven,
            trigger_points: 50,
        };
        for event in plan_campaign(&campaign, &arena.map()).unwrap() {
            inject(&mut arena, &event).unwrap();
        }
        for (h, vals) in &contents {
            prop_assert!(arena.scrub(*h).unwrap().is_clean());
            for (i, &v) in vals.iter().enumerate() {
                prop_assert_eq!(arena.read(*h, i * WORD_BYTES).unwrap(), v);
            }
            prop_assert_eq!(arena.stats(*h).unwrap().detections, 0);
        }
    }

    #[test]
    fn campaigns_are_seeded_and_well_formed(
        seed in any::<u64>(),
        faults in 1usize..12,
        bits in (1u32..=64).prop_flat_map(|lo| (Just(lo), lo..=64)),
        contiguous in any::<bool>(),
    ) {
        let mut arena = Arena::new(PAGE, 8).unwrap();
        let h = arena.create(Protection::Parity);
        arena.alloc(h, 5 * PAGE / 2).unwrap();
        let campaign = FaultCampaign {
            seed,
            min_faults: faults,
            min_bits: bits.0,
            max_bits: bits.1,
            pattern: if contiguous { BitPattern::Contiguous } else { BitPattern::Random },
            target: FaultTarget::HavenOnly(h),
            trigger_points: 40,
        };
        let map = arena.map();
        let events = plan_campaign(&campaign, &map).unwrap();
        prop_assert_eq!(&events, &plan_campaign(&campaign, &map).unwrap());
        prop_assert_eq!(events.len(), faults);
        let triggers: HashSet<usize> = events.iter().map(|e| e.trigger_index).collect();
        prop_assert_eq!(triggers.len(), faults);
        let extent = arena.extent(h).unwrap();
        for e in &events {
            prop_assert!(e.trigger_index < 40);
            prop_assert_eq!(e.byte_offset % WORD_BYTES, 0);
            let page = e.byte_offset / PAGE;
            let k = arena.pages(h).unwrap().iter().position(|&p| p == page);
            prop_assert!(k.is_some_and(|k| k * PAGE + e.byte_offset % PAGE < extent));
            let w = e.bit_mask.count_ones();
            prop_assert!((bits.0..=bits.1).contains(&w));
            if contiguous {
                let shifted = e.bit_mask >> e.bit_mask.trailing_zeros();
                prop_assert_eq!(shifted.count_ones(), shifted.trailing_ones());
            }
        }
    }
}
