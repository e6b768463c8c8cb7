use super::trace::Recorder;
use super::{check_ordering, Algorithm, ConfigEvaluator, Decision, Revalidation, SearchOutcome, SearchSpec};
use crate::error::Result;

fn with_prefix(w: &[u8], list: &[usize], thr: usize, bits: u8) -> Vec<u8> {
    let mut lw = w.to_vec();
    for &l in &list[..thr] {
        lw[l] = bits;
    }
    lw
}

/// For each lower bit level, binary-searches the longest prefix of the
/// surviving sensitivity list that can drop to that level while accuracy
/// stays at or above `target · baseline`. The accepted prefix becomes the
/// list searched at the next level.
///
/// The bracket `[lo, hi)` starts at `[0, len + 1)` so that the full list is
/// reachable, uses floor midpoints and stops at width one. Before a level is
/// committed its configuration must have passed an evaluation; otherwise it
/// is re-evaluated and the prefix shortened until it does.
pub fn bisection_search<E: ConfigEvaluator + ?Sized>(
    eval: &E,
    ordering: &[usize],
    spec: &SearchSpec,
) -> Result<SearchOutcome> {
    spec.validate()?;
    check_ordering(ordering, eval.layer_count())?;
    let mut rec = Recorder::new(eval, Algorithm::Bisection, spec.max_evals);
    let mut w = rec.baseline(spec)?;
    let threshold = rec.trace.threshold;
    let mut list = ordering.to_vec();

    'levels: for &b in &spec.bit_palette[1..] {
        let (mut lo, mut hi) = (0usize, list.len() + 1);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            let lw = with_prefix(&w, &list, mid, b);
            match rec.evaluate(b, &lw)? {
                Some(acc) if acc >= threshold => {
                    rec.decide(Decision::Accept);
                    lo = mid;
                }
                Some(_) => hi = mid,
                None => {
                    w = with_prefix(&w, &list, lo, b);
                    break 'levels;
                }
            }
        }

        let mut thr = lo;
        while thr > 0 {
            let lw = with_prefix(&w, &list, thr, b);
            if spec.revalidation == Revalidation::Cached && rec.passed_before(&lw) {
                break;
            }
            match rec.evaluate(b, &lw)? {
                Some(acc) if acc >= threshold => {
                    rec.decide(Decision::Revalidated);
                    break;
                }
                Some(_) => {
                    rec.decide(Decision::RevalidationFailed);
                    rec.trace.revalidated = true;
                    thr -= 1;
                }
                None => {
                    // Cannot confirm; fall back to the last committed level.
                    break 'levels;
                }
            }
        }
        w = with_prefix(&w, &list, thr, b);
        list.truncate(thr);
    }
    Ok(rec.finish(w))
}
