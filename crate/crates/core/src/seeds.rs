//! Seed derivation. Every random stream is `master + offset` for a fixed
//! per-purpose offset, so adding a purpose never shifts an existing stream.
//!
//! | offset            | purpose                                        |
//! |-------------------|------------------------------------------------|
//! | 1                 | random population weights                      |
//! | 2                 | random assignment policy                       |
//! | 10                | randomized experiment                          |
//! | 11                | confounding injector                           |
//! | 100 + 10·m + v    | training, method `m`, variant `v`              |
//! | 200               | reward-table reference draws                   |
//! | 300 + 16·i + j    | win rate of method `i` over method `j`         |
//! | 600 + i           | confounding impact, row `i`                    |
//! | 1000 + c·100      | acceptance criterion `c`                       |

pub const POPULATION: u64 = 1;
pub const ASSIGNMENT: u64 = 2;
pub const SIMULATE: u64 = 10;
pub const CONFOUND: u64 = 11;
pub const TRAIN: u64 = 100;
pub const REWARD_TABLE: u64 = 200;
pub const WIN_RATE: u64 = 300;
pub const IMPACT: u64 = 600;
pub const ACCEPTANCE: u64 = 1000;

pub fn derive(master: u64, offset: u64) -> u64 {
    master.wrapping_add(offset)
}

pub fn train(master: u64, method_index: usize, variant: usize) -> u64 {
    derive(master, TRAIN + 10 * method_index as u64 + variant as u64)
}

pub fn win_rate(master: u64, i: usize, j: usize) -> u64 {
    derive(master, WIN_RATE + 16 * i as u64 + j as u64)
}

pub fn impact(master: u64, row: usize) -> u64 {
    derive(master, IMPACT + row as u64)
}

pub fn acceptance(master: u64, criterion: u32) -> u64 {
    derive(master, ACCEPTANCE + 100 * criterion as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_do_not_collide() {
        let mut all = vec![POPULATION, ASSIGNMENT, SIMULATE, CONFOUND, REWARD_TABLE];
        for m in 0..4 {
            for v in 0..3 {
                all.push(TRAIN + 10 * m + v);
            }
        }
        for i in 0..16 {
            for j in 0..16 {
                all.push(WIN_RATE + 16 * i + j);
            }
        }
        all.extend((0..8).map(|r| IMPACT + r));
        all.extend((1..=9).map(|c| ACCEPTANCE + 100 * c));
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), n);
        assert_eq!(derive(u64::MAX, 2), 1);
    }
}
