//! Synthetic order worlds: legitimate users with one account on one or two
//! devices, and abusers who fan many single-order accounts out over a device
//! farm. Worlds project to an [`OrderGraph`](crate::graph::OrderGraph) with
//! engineered node features and conservative pseudo-labels.

mod embed;
mod project;
mod rules;

pub use embed::{click_path_buckets, embed_click_path};
pub use project::{build_features, project_order_graph, username_similarity, USERNAME_SIMILARITY};
pub use rules::{apply_pseudo_label_rules, RuleSet};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const DEFAULT_VOCAB: [&str; 16] = [
    "Home",
    "Search",
    "Category",
    "Product",
    "Reviews",
    "Cart",
    "Voucher Center",
    "Collect Voucher",
    "Checkout",
    "Payment",
    "My Orders",
    "Personal Page",
    "Register",
    "Login",
    "Wishlist",
    "Flash Sale",
];

/// Length of the scripted action sequence abusers tend to follow.
const SCRIPT_LEN: usize = 5;
/// Probability that an abusive click follows the script.
const SCRIPT_FOLLOW: f64 = 0.6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_legit_users: usize,
    pub n_abusers: usize,
    pub abuser_devices: (usize, usize),
    pub accounts_per_device: (usize, usize),
    pub legit_devices: (usize, usize),
    pub address_pool_size: usize,
    /// Shared pickup points; the first `hub_addresses` pool entries.
    pub hub_addresses: usize,
    /// Share of legitimate users shipping to a hub address.
    pub hub_share: f64,
    /// Extra single-device accounts per abuser that mimic legitimate users.
    /// Only generated when a legitimate population exists.
    pub mules_per_abuser: usize,
    pub clickpath_vocab: Vec<String>,
    pub clickpath_len: (usize, usize),
    pub embed_dim: usize,
    pub raw_feature_dim: usize,
    pub feature_noise_scale: f64,
    /// Per-coordinate offset between the legitimate and abusive raw-feature centers.
    pub feature_shift: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    /// About 2,000 orders, roughly 5% abusive.
    fn default() -> Self {
        Self {
            n_legit_users: 1900,
            n_abusers: 7,
            abuser_devices: (2, 4),
            accounts_per_device: (2, 6),
            legit_devices: (1, 2),
            address_pool_size: 1500,
            hub_addresses: 8,
            hub_share: 0.05,
            mules_per_abuser: 1,
            clickpath_vocab: DEFAULT_VOCAB.iter().map(|s| s.to_string()).collect(),
            clickpath_len: (3, 10),
            embed_dim: 16,
            raw_feature_dim: 8,
            feature_noise_scale: 1.5,
            feature_shift: 1.0,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_legit_users + self.n_abusers == 0 {
            return bad("world needs at least one user".into());
        }
        for (name, (lo, hi)) in [
            ("abuser_devices", self.abuser_devices),
            ("accounts_per_device", self.accounts_per_device),
            ("legit_devices", self.legit_devices),
            ("clickpath_len", self.clickpath_len),
        ] {
            if lo == 0 {
                return bad(format!("{name} minimum must be >= 1"));
            }
            if hi < lo {
                return bad(format!("{name} max {hi} < min {lo}"));
            }
        }
        if self.legit_devices.1 > 2 {
            return bad("legit_devices must lie within 1..=2".into());
        }
        if self.address_pool_size == 0 || self.embed_dim == 0 || self.raw_feature_dim == 0 {
            return bad("address_pool_size, embed_dim and raw_feature_dim must be >= 1".into());
        }
        if self.hub_addresses > self.address_pool_size {
            return bad("hub_addresses exceeds address_pool_size".into());
        }
        if !(0.0..=1.0).contains(&self.hub_share) {
            return bad("hub_share must lie in [0,1]".into());
        }
        if self.clickpath_vocab.is_empty() {
            return bad("clickpath_vocab is empty".into());
        }
        if !(self.feature_noise_scale.is_finite() && self.feature_noise_scale >= 0.0) || !self.feature_shift.is_finite() {
            return bad("feature_noise_scale must be >= 0 and feature_shift finite".into());
        }
        Ok(())
    }

    pub fn feature_width(&self) -> usize {
        self.raw_feature_dim + self.embed_dim + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Legit,
    Abusive,
}

impl Role {
    pub fn label(self) -> u8 {
        match self {
            Role::Legit => 0,
            Role::Abusive => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Account {
    /// Owning user; abusers own many accounts.
    pub user: usize,
    pub username: String,
    pub devices: Vec<usize>,
    pub address: usize,
    pub role: Role,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Order {
    pub account: usize,
    pub voucher: bool,
    pub click_path: Vec<String>,
    pub raw: Vec<f64>,
    pub role: Role,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityWorld {
    pub n_devices: usize,
    pub n_addresses: usize,
    pub accounts: Vec<Account>,
    pub orders: Vec<Order>,
}

impl EntityWorld {
    pub fn labels(&self) -> Vec<u8> {
        self.orders.iter().map(|o| o.role.label()).collect()
    }

    pub fn n_abusive(&self) -> usize {
        self.orders.iter().filter(|o| o.role == Role::Abusive).count()
    }

    /// Account ids grouped by device.
    pub fn device_accounts(&self) -> Vec<Vec<usize>> {
        let mut by_device = vec![Vec::new(); self.n_devices];
        for (a, acc) in self.accounts.iter().enumerate() {
            for &d in &acc.devices {
                by_device[d].push(a);
            }
        }
        by_device
    }

    pub fn check_invariants(&self) -> Result<()> {
        let mut voucher_orders = vec![0usize; self.accounts.len()];
        for o in &self.orders {
            let acc = self
                .accounts
                .get(o.account)
                .ok_or_else(|| Error::Degenerate(format!("order references missing account {}", o.account)))?;
            if acc.role != o.role {
                return Err(Error::Degenerate("order role differs from account role".into()));
            }
            if o.voucher {
                voucher_orders[o.account] += 1;
            }
        }
        for (a, acc) in self.accounts.iter().enumerate() {
            if acc.address >= self.n_addresses || acc.devices.iter().any(|&d| d >= self.n_devices) {
                return Err(Error::Degenerate(format!("account {a} references a missing entity")));
            }
            if acc.role == Role::Abusive && voucher_orders[a] != 1 {
                return Err(Error::Degenerate(format!("abusive account {a} has {} voucher orders", voucher_orders[a])));
            }
        }
        Ok(())
    }
}

fn random_name(rng: &mut RngStream, len: usize) -> String {
    (0..len).map(|_| (b'a' + rng.below(26) as u8) as char).collect()
}

struct Sampler<'a> {
    cfg: &'a GenConfig,
    rng: RngStream,
    abuse_center: Vec<f64>,
    script: Vec<usize>,
}

impl Sampler<'_> {
    fn raw(&mut self, role: Role) -> Vec<f64> {
        let noise = self.cfg.feature_noise_scale;
        (0..self.cfg.raw_feature_dim)
            .map(|j| {
                let center = match role {
                    Role::Legit => 0.0,
                    Role::Abusive => self.abuse_center[j],
                };
                let z: f64 = StandardNormal.sample(&mut self.rng);
                center + noise * z
            })
            .collect()
    }

    fn click_path(&mut self, role: Role) -> Vec<String> {
        let vocab = &self.cfg.clickpath_vocab;
        let len = self.rng.inclusive(self.cfg.clickpath_len.0, self.cfg.clickpath_len.1);
        let mut path = Vec::with_capacity(len);
        for step in 0..len {
            let idx = match role {
                Role::Abusive if self.rng.chance(SCRIPT_FOLLOW) => self.script[step % self.script.len()],
                _ => self.rng.below(vocab.len()),
            };
            path.push(vocab[idx].clone());
        }
        path
    }
}

/// Draws a world. A pure function of `cfg`.
pub fn generate_world(cfg: &GenConfig) -> Result<EntityWorld> {
    cfg.validate()?;
    let mut rng = RngStream::derive(cfg.seed, 0x5157);
    let abuse_center = (0..cfg.raw_feature_dim)
        .map(|_| if rng.chance(0.5) { cfg.feature_shift } else { -cfg.feature_shift })
        .collect();
    let script = rand::seq::index::sample(&mut rng, cfg.clickpath_vocab.len(), SCRIPT_LEN.min(cfg.clickpath_vocab.len()))
        .into_vec();
    let mut s = Sampler {
        cfg,
        rng,
        abuse_center,
        script,
    };

    let mut accounts = Vec::new();
    let mut n_devices = 0usize;
    let mut fresh_device = || {
        n_devices += 1;
        n_devices - 1
    };

    for user in 0..cfg.n_legit_users {
        let n_dev = s.rng.inclusive(cfg.legit_devices.0, cfg.legit_devices.1);
        let devices = (0..n_dev).map(|_| fresh_device()).collect();
        let address = if cfg.hub_addresses > 0 && s.rng.chance(cfg.hub_share) {
            s.rng.below(cfg.hub_addresses)
        } else {
            s.rng.below(cfg.address_pool_size)
        };
        accounts.push(Account {
            user,
            username: random_name(&mut s.rng, 10),
            devices,
            address,
            role: Role::Legit,
        });
    }

    for k in 0..cfg.n_abusers {
        let user = cfg.n_legit_users + k;
        let stem = random_name(&mut s.rng, 8);
        let address = s.rng.below(cfg.address_pool_size);
        let n_dev = s.rng.inclusive(cfg.abuser_devices.0, cfg.abuser_devices.1);
        let mut serial = 0usize;
        for _ in 0..n_dev {
            let device = fresh_device();
            let per_device = s.rng.inclusive(cfg.accounts_per_device.0, cfg.accounts_per_device.1);
            for _ in 0..per_device {
                accounts.push(Account {
                    user,
                    username: format!("{stem}{:02}", serial % 100),
                    devices: vec![device],
                    address,
                    role: Role::Abusive,
                });
                serial += 1;
            }
        }
        if cfg.n_legit_users > 0 {
            for _ in 0..cfg.mules_per_abuser {
                accounts.push(Account {
                    user,
                    username: random_name(&mut s.rng, 10),
                    devices: vec![fresh_device()],
                    address,
                    role: Role::Abusive,
                });
            }
        }
    }

    // Node ids carry no role information.
    rand::seq::SliceRandom::shuffle(accounts.as_mut_slice(), &mut s.rng);

    let orders = (0..accounts.len())
        .map(|a| {
            let role = accounts[a].role;
            Order {
                account: a,
                voucher: true,
                click_path: s.click_path(role),
                raw: s.raw(role),
                role,
            }
        })
        .collect();

    Ok(EntityWorld {
        n_devices,
        n_addresses: cfg.address_pool_size,
        accounts,
        orders,
    })
}
