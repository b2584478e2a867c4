use serde::{Deserialize, Serialize};

use super::EntityWorld;
use crate::error::{Error, Result};
use crate::graph::{LabelMap, OrderGraph};

/// Device fan-out rule: flag orders from devices hosting at least
/// `min_accounts_per_device` accounts that each placed exactly one voucher order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub min_accounts_per_device: usize,
    pub require_single_voucher_order: bool,
}

impl Default for RuleSet {
    fn default() -> Self {
        Self {
            min_accounts_per_device: 4,
            require_single_voucher_order: true,
        }
    }
}

pub fn apply_pseudo_label_rules(world: &EntityWorld, g: &OrderGraph, rules: &RuleSet) -> Result<LabelMap> {
    if rules.min_accounts_per_device < 2 {
        return Err(Error::Config("min_accounts_per_device must be >= 2".into()));
    }
    if world.orders.len() != g.n_nodes() {
        return Err(Error::RowMismatch {
            what: "graph nodes",
            got: g.n_nodes(),
            expected: world.orders.len(),
        });
    }
    let mut voucher_orders = vec![0usize; world.accounts.len()];
    let mut account_orders = vec![Vec::new(); world.accounts.len()];
    for (i, o) in world.orders.iter().enumerate() {
        account_orders[o.account].push(i);
        if o.voucher {
            voucher_orders[o.account] += 1;
        }
    }
    let mut flagged = LabelMap::new();
    for accounts in world.device_accounts() {
        let qualifying: Vec<usize> = accounts
            .into_iter()
            .filter(|&a| !rules.require_single_voucher_order || voucher_orders[a] == 1)
            .collect();
        if qualifying.len() >= rules.min_accounts_per_device {
            for a in qualifying {
                for &i in &account_orders[a] {
                    flagged.insert(i, 1);
                }
            }
        }
    }
    Ok(flagged)
}
