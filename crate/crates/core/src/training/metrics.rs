/// Fraction of exact matches, as a percentage.
pub fn accuracy(pred: &[usize], gold: &[usize]) -> f64 {
    assert_eq!(pred.len(), gold.len());
    if gold.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(gold).filter(|(a, b)| a == b).count();
    100.0 * hits as f64 / gold.len() as f64
}

/// Micro-averaged F1 over label sets, as a percentage.
pub fn micro_f1(pred: &[Vec<usize>], gold: &[Vec<usize>]) -> f64 {
    assert_eq!(pred.len(), gold.len());
    let (mut tp, mut np, mut ng) = (0usize, 0usize, 0usize);
    for (p, g) in pred.iter().zip(gold) {
        tp += p.iter().filter(|l| g.contains(l)).count();
        np += p.len();
        ng += g.len();
    }
    f1(tp, np, ng)
}

fn f1(correct: usize, guessed: usize, found: usize) -> f64 {
    let p = if guessed > 0 { 100.0 * correct as f64 / guessed as f64 } else { 0.0 };
    let r = if found > 0 { 100.0 * correct as f64 / found as f64 } else { 0.0 };
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

pub fn perplexity_from_nll(mean_nll: f64) -> f64 {
    mean_nll.exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChunkCounts {
    pub correct: usize,
    /// Chunks in the prediction.
    pub guessed: usize,
    /// Chunks in the gold standard.
    pub found: usize,
}

impl ChunkCounts {
    pub fn precision(&self) -> f64 {
        if self.guessed > 0 {
            100.0 * self.correct as f64 / self.guessed as f64
        } else {
            0.0
        }
    }

    pub fn recall(&self) -> f64 {
        if self.found > 0 {
            100.0 * self.correct as f64 / self.found as f64
        } else {
            0.0
        }
    }

    pub fn f1(&self) -> f64 {
        f1(self.correct, self.guessed, self.found)
    }
}

fn split_tag(tag: &str) -> (&str, &str) {
    tag.split_once('-').unwrap_or((tag, ""))
}

fn end_of_chunk(prev: &str, tag: &str, prev_ty: &str, ty: &str) -> bool {
    matches!(prev, "E" | "S" | "]" | "[")
        || matches!((prev, tag), ("B" | "I", "B" | "S" | "O"))
        || (prev != "O" && prev != "." && prev_ty != ty)
}

fn start_of_chunk(prev: &str, tag: &str, prev_ty: &str, ty: &str) -> bool {
    matches!(tag, "B" | "S" | "[" | "]")
        || matches!((prev, tag), ("E" | "S" | "O", "E" | "I"))
        || (tag != "O" && tag != "." && prev_ty != ty)
}

/// Chunk counts with the semantics of the CoNLL-2000 evaluation script.
/// Each sentence is a `(gold, predicted)` pair of tag sequences; sentence
/// boundaries behave like an `O` token.
pub fn conlleval_counts<S: AsRef<str>>(sentences: &[(Vec<S>, Vec<S>)]) -> ChunkCounts {
    let mut c = ChunkCounts {
        correct: 0,
        guessed: 0,
        found: 0,
    };
    let mut in_correct = false;
    let (mut last_c, mut last_ct) = ("O", "");
    let (mut last_g, mut last_gt) = ("O", "");
    let boundary = [("O", "O")];
    for (gold, pred) in sentences {
        assert_eq!(gold.len(), pred.len(), "gold and predicted tags differ in length");
        let pairs = gold.iter().zip(pred).map(|(g, p)| (g.as_ref(), p.as_ref()));
        for (gold_tag, pred_tag) in pairs.chain(boundary.iter().copied()) {
            let (ct, cty) = split_tag(gold_tag);
            let (gt, gty) = split_tag(pred_tag);
            if in_correct {
                let ce = end_of_chunk(last_c, ct, last_ct, cty);
                let ge = end_of_chunk(last_g, gt, last_gt, gty);
                if ce && ge && last_gt == last_ct {
                    in_correct = false;
                    c.correct += 1;
                } else if ce != ge || gty != cty {
                    in_correct = false;
                }
            }
            let cs = start_of_chunk(last_c, ct, last_ct, cty);
            let gs = start_of_chunk(last_g, gt, last_gt, gty);
            if cs && gs && gty == cty {
                in_correct = true;
            }
            if cs {
                c.found += 1;
            }
            if gs {
                c.guessed += 1;
            }
            (last_c, last_ct, last_g, last_gt) = (ct, cty, gt, gty);
        }
    }
    if in_correct {
        c.correct += 1;
    }
    c
}

/// Entity-level F1 (exact span and type), as a percentage.
pub fn entity_f1<S: AsRef<str>>(sentences: &[(Vec<S>, Vec<S>)]) -> f64 {
    conlleval_counts(sentences).f1()
}
