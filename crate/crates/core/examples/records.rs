//! Record round trips, merging with offsets and the detector model.

use cavity_beats::records::{
    apply_detector, from_binary, from_text, merge_records, poisson_record, to_binary, to_text, Channel,
    DetectorModel,
};

pub fn run_example() -> cavity_beats::Result<()> {
    let a = poisson_record(2e5, 100_000_000, Channel::HDetA, 1);
    let b = poisson_record(2e5, 100_000_000, Channel::HDetB, 2);

    let text = to_text(&a)?;
    println!("text form, first lines:\n{}", text.lines().take(6).collect::<Vec<_>>().join("\n"));
    assert_eq!(from_text(text.as_bytes())?, a);
    let bin = to_binary(&a)?;
    assert_eq!(from_binary(&bin)?, a);
    println!("{} events: {} bytes as text, {} bytes binary", a.len(), text.len(), bin.len());

    let merged = merge_records(&[a.clone(), b.clone()], &[0, 1_000_000])?;
    println!("merged: {} events over {:.1} us", merged.len(), merged.duration() * 1e6);

    let detector = DetectorModel {
        efficiency: 0.5,
        dead_time: 45e-9,
        dark_rate: 1e3,
    };
    let seen = apply_detector(&merged, &detector, 9)?;
    let dark = seen.events.iter().filter(|e| !e.truth).count();
    println!("after detector: {} events ({dark} dark counts)", seen.len());
    seen.validate()?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> cavity_beats::Result<()> {
    run_example()
}
