//! Scripted single-haven demo: write, corrupt, scrub, read back.

use havens_core::{parity_bit, Arena, Protection, WORD_BYTES};

use crate::config::{DemoSection, Expectation};
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct DemoRun {
    pub trace: Vec<String>,
    pub observed: Expectation,
}

fn pattern(i: usize) -> u64 {
    (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Runs the scripted demo on an arena of `page_size`-byte pages.
pub fn run_demo(demo: &DemoSection, page_size: usize) -> Result<DemoRun, CliError> {
    if demo.words == 0 {
        return Err(CliError::Config(
            "scrub_demo.words must be at least 1".into(),
        ));
    }
    let mut masks = Vec::with_capacity(demo.faults.len());
    for f in &demo.faults {
        if f.word >= demo.words {
            return Err(CliError::Config(format!(
                "scripted fault targets word {} of a {}-word haven",
                f.word, demo.words
            )));
        }
        masks.push((f.word, f.mask.value()?));
    }

    let bytes = demo.words * WORD_BYTES;
    let pages = bytes.div_ceil(page_size).max(1);
    let mut arena = Arena::new(page_size, pages)?;
    let h = arena.create(Protection::Parity);
    arena.alloc(h, bytes)?;
    let shadow: Vec<u64> = (0..demo.words).map(pattern).collect();
    for (i, &v) in shadow.iter().enumerate() {
        arena.write(h, i * WORD_BYTES, v)?;
    }
    let mut trace = vec![format!(
        "haven {}: {} words written, {} signature words",
        h.id(),
        demo.words,
        arena.protection_overhead(h)?.signature_words
    )];

    for &(word, mask) in &masks {
        let phys = arena.physical_offset(h, word * WORD_BYTES)?;
        arena.flip_bits(phys, mask)?;
        let weight = mask.count_ones();
        trace.push(format!(
            "inject word {word} mask {mask:#x} ({weight} bit{}, {} parity)",
            if weight == 1 { "" } else { "s" },
            if parity_bit(mask) { "odd" } else { "even" }
        ));
    }

    let report = arena.scrub(h)?;
    if report.is_clean() {
        trace.push("scrub: no violations".into());
    } else {
        trace.push(format!(
            "scrub: violations at words {:?}",
            report.violations
        ));
    }
    for (index, value) in &report.recovered {
        trace.push(format!("recovered word {index} = {value:#018x}"));
    }
    if report.unrecoverable {
        trace.push(
            "unrecoverable: more than one word violates parity, memory left untouched".into(),
        );
    }

    let (mut refused, mut wrong) = (0usize, 0usize);
    for (i, &expected) in shadow.iter().enumerate() {
        match arena.read(h, i * WORD_BYTES) {
            Ok(v) if v == expected => {}
            Ok(v) => {
                wrong += 1;
                trace.push(format!(
                    "read word {i}: {v:#018x}, expected {expected:#018x} (silent corruption)"
                ));
            }
            Err(e) => {
                refused += 1;
                trace.push(format!("read word {i}: {e}"));
            }
        }
    }
    let stats = arena.stats(h)?;
    trace.push(format!(
        "reads: {} ok, {refused} refused, {wrong} wrong; detections {}, recoveries {}, unrecoverables {}",
        demo.words - refused - wrong,
        stats.detections,
        stats.recoveries,
        stats.unrecoverables
    ));

    let observed = if report.unrecoverable {
        Expectation::Unrecoverable
    } else if wrong > 0 {
        Expectation::Undetected
    } else if report.is_clean() {
        Expectation::Clean
    } else {
        Expectation::Recovered
    };
    Ok(DemoRun { trace, observed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Mask, ScriptedFault};

    fn demo(faults: &[(usize, u64)], expect: Expectation) -> DemoSection {
        DemoSection {
            words: 64,
            faults: faults
                .iter()
                .map(|&(word, mask)| ScriptedFault {
                    word,
                    mask: Mask::Int(mask),
                })
                .collect(),
            expect,
        }
    }

    #[test]
    fn single_odd_flip_is_recovered() {
        let run = run_demo(&demo(&[(3, 1)], Expectation::Recovered), 512).unwrap();
        assert_eq!(run.observed, Expectation::Recovered);
        assert!(run.trace.iter().any(|l| l.starts_with("recovered word 3")));
        assert!(run
            .trace
            .last()
            .unwrap()
            .contains("detections 1, recoveries 1"));
    }

    #[test]
    fn two_bad_words_are_unrecoverable() {
        let run = run_demo(
            &demo(&[(3, 1), (40, 0x80)], Expectation::Unrecoverable),
            512,
        )
        .unwrap();
        assert_eq!(run.observed, Expectation::Unrecoverable);
        assert!(run.trace.last().unwrap().contains("0 wrong"));
    }

    #[test]
    fn even_flip_is_silent_and_empty_script_is_clean() {
        assert_eq!(
            run_demo(&demo(&[(5, 0b11)], Expectation::Undetected), 512)
                .unwrap()
                .observed,
            Expectation::Undetected
        );
        assert_eq!(
            run_demo(&demo(&[], Expectation::Clean), 512)
                .unwrap()
                .observed,
            Expectation::Clean
        );
    }

    #[test]
    fn haven_spans_several_pages() {
        let mut d = demo(&[(200, 1 << 63)], Expectation::Recovered);
        d.words = 300;
        assert_eq!(run_demo(&d, 512).unwrap().observed, Expectation::Recovered);
    }

    #[test]
    fn bad_scripts_are_config_errors() {
        let err = run_demo(&demo(&[(64, 1)], Expectation::Recovered), 512).unwrap_err();
        assert_eq!(err.exit_code(), crate::EXIT_CONFIG);
        let err = run_demo(&demo(&[(1, 0)], Expectation::Recovered), 512).unwrap_err();
        assert_eq!(err.exit_code(), crate::EXIT_CONFIG);
    }
}
