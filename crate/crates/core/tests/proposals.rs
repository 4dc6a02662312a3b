use docspot::geometry::iou;
use docspot::proposals::{propose, ProposalParams};
use docspot::synth::{generate, SynthConfig};

#[test]
fn planted_stamps_are_recovered() {
    let corpus = generate(&SynthConfig { pages: 6, seed: 7, ..SynthConfig::default() }).unwrap();
    let params = ProposalParams::default();
    let mut found = 0;
    let mut total = 0;
    let mut count = 0;
    for page in &corpus.pages {
        let cands = propose(&page.doc_id, &page.image, &params).unwrap();
        count += cands.len();
        for (kind, b) in &page.plants {
            total += 1;
            let best = cands.iter().map(|c| iou(&c.bbox, b)).fold(0.0, f64::max);
            if best >= 0.7 {
                found += 1;
            } else {
                eprintln!("{} {kind} {b}: best IoU {best:.3}", page.doc_id);
            }
        }
    }
    eprintln!("recall {found}/{total}, {count} proposals");
    assert!(found as f64 >= 0.9 * total as f64, "recall {found}/{total}");
}
