use super::trace::Recorder;
use super::{check_ordering, Algorithm, ConfigEvaluator, Decision, SearchOutcome, SearchSpec};
use crate::error::Result;

/// Tries each surviving layer at each lower level in sensitivity order,
/// keeping the change when accuracy stays at or above `target · baseline`
/// and reverting otherwise. Only layers kept at a level are tried at the
/// next one.
pub fn progressive_search<E: ConfigEvaluator + ?Sized>(
    eval: &E,
    ordering: &[usize],
    spec: &SearchSpec,
) -> Result<SearchOutcome> {
    spec.validate()?;
    check_ordering(ordering, eval.layer_count())?;
    let mut rec = Recorder::new(eval, Algorithm::Progressive, spec.max_evals);
    let mut w = rec.baseline(spec)?;
    let threshold = rec.trace.threshold;
    let mut list = ordering.to_vec();

    'levels: for &b in &spec.bit_palette[1..] {
        let mut kept = Vec::new();
        for &l in &list {
            let prev = w[l];
            w[l] = b;
            match rec.evaluate(b, &w)? {
                Some(acc) if acc >= threshold => {
                    rec.decide(Decision::Accept);
                    kept.push(l);
                }
                Some(_) => w[l] = prev,
                None => {
                    w[l] = prev;
                    break 'levels;
                }
            }
        }
        list = kept;
    }
    Ok(rec.finish(w))
}
