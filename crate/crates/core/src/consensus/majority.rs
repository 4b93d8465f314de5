//! Majority-chain rule: elected miners extend branches; a block confirms
//! once it is `k` deep on the heaviest branch held by more than the
//! configured fraction of nodes.

use rand::Rng;

use super::{ByzantineKind, ConfirmedTx, Fraction, Network, NodeBehavior};
use crate::digest::Digest;

impl Network {
    fn holders(&self, block: &Digest) -> usize {
        self.nodes
            .iter()
            .filter(|n| self.chain_contains(&n.tip, block))
            .count()
    }

    pub(super) fn run_majority_round(&mut self, fraction: Fraction, k: u64) -> Vec<ConfirmedTx> {
        let round = self.round;
        self.round += 1;
        self.now += self.config.block_interval.max(1);
        let n = self.nodes.len();
        let adversary: Vec<usize> = (0..n)
            .filter(|&i| self.nodes[i].behavior == NodeBehavior::Byzantine(ByzantineKind::PrivateFork))
            .collect();
        let honest: Vec<usize> = (0..n)
            .filter(|&i| self.nodes[i].behavior == NodeBehavior::Honest)
            .collect();
        let miners: Vec<usize> = honest
            .iter()
            .copied()
            .filter(|&i| self.is_live(i, round))
            .collect();

        let adversary_mines = !adversary.is_empty() && self.rng.gen_bool(self.adversary_share.clamp(0.0, 1.0));
        if adversary_mines {
            let m = adversary[0];
            let parent = self.nodes[m].tip;
            let b = self.build_block(m, parent, 1, false);
            for &i in &adversary {
                self.nodes[i].tip = b.hash;
            }
        } else if !miners.is_empty() {
            let m = miners[self.rng.gen_range(0..miners.len())];
            let parent = self.nodes[m].tip;
            let b = self.build_block(m, parent, 0, true);
            // Honest nodes always adopt extensions of their own tip.
            for i in 0..n {
                if self.nodes[i].behavior == NodeBehavior::Honest && self.nodes[i].tip == parent {
                    self.nodes[i].tip = b.hash;
                }
            }
        }

        // Honest fork choice: switch only to a heavier tip held by a majority.
        let tips: Vec<Digest> = {
            let mut t: Vec<Digest> = self.nodes.iter().map(|n| n.tip).collect();
            t.sort();
            t.dedup();
            t
        };
        let majority_tips: Vec<(u64, Digest)> = tips
            .iter()
            .filter(|t| fraction.exceeded_by(self.holders(t), n))
            .map(|t| (self.entry(t).block.height, *t))
            .collect();
        let best = majority_tips
            .iter()
            .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
            .copied();
        if let Some((h, tip)) = best {
            for &i in &honest {
                let mine = self.entry(&self.nodes[i].tip).block.height;
                if h > mine {
                    self.nodes[i].tip = tip;
                }
            }
        }

        // Confirmation on the heaviest majority-held branch.
        let mut out = Vec::new();
        if let Some((h, tip)) = best {
            if !self.chain_contains(&tip, &self.confirmed_tip) {
                // The majority branch abandoned a confirmed block.
                self.safety_violations += 1;
                return out;
            }
            let from = self.confirmed_height() + 1;
            for height in from..=h.saturating_sub(k) {
                let hash = self.ancestor_at(&tip, height);
                out.extend(self.confirm_block(hash, self.now));
            }
        }
        out
    }
}
