//! Tracker tag emulator: pre-activation advertising, device information,
//! activation challenge-response, identifier rotation and the connected
//! owner channel.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::crypto::{
    self, AuthKey, ChannelLayout, CryptoError, InterimAuthKey, MacAddr, MessageMac, PrivateIdSeed,
    RandA, RandT, SresT, TagKey, TileId, ToaToken, OWNER_AUTH_MESSAGE,
};
use crate::sim::SimRng;
use crate::wire::{Advertisement, TdiRecord, WireError};

pub const TDI_SERVICE_UUID: &str = "180A";
pub const TILE_ID_CHAR_UUID: &str = "9d410007-35d6-f4dd-ba60-e7bd8dc491c0";
pub const MODEL_CHAR_UUID: &str = "00002a24-0000-1000-8000-00805f9b34fb";
pub const FIRMWARE_CHAR_UUID: &str = "00002a26-0000-1000-8000-00805f9b34fb";
pub const HARDWARE_CHAR_UUID: &str = "00002a27-0000-1000-8000-00805f9b34fb";
pub const TOA_CMD_CHAR_UUID: &str = "9d410018-35d6-f4dd-ba60-e7bd8dc491c0";
pub const TOA_RSP_CHAR_UUID: &str = "9d410019-35d6-f4dd-ba60-e7bd8dc491c0";
pub const SONG_CHAR_UUID: &str = "9d410002-35d6-f4dd-ba60-e7bd8dc491c0";
pub const REVERSE_RING_CHAR_UUID: &str = "9d410000-35d6-f4dd-ba60-e7bd8dc491c0";

/// Owner command that plays the song.
pub const RING_COMMAND: [u8; 2] = [0x05, 0x02];
/// Counterfactual re-key command: `0x7e ‖ authKey(16) ‖ activation(8, LE)`.
/// Only used when the server rotates keys on transfer or revocation.
pub const REKEY_OPCODE: u8 = 0x7e;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TagError {
    #[error("state error: {0}")]
    State(&'static str),
    #[error("activation refused")]
    ActivationRefused,
    #[error("owner message failed authentication")]
    AuthReject,
    #[error("owner message counter {got} not above {last}")]
    ReplayReject { got: u16, last: u16 },
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagConfig {
    /// Counterfactual: rotate the MAC with each identifier slot.
    pub randomized_mac: bool,
    /// Reject owner messages whose counter does not increase.
    pub ctr_check: bool,
    pub channel_layout: ChannelLayout,
}

impl Default for TagConfig {
    fn default() -> Self {
        Self {
            randomized_mac: false,
            ctr_check: true,
            channel_layout: ChannelLayout::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Phase {
    Unactivated(InterimAuthKey),
    Activated {
        auth_key: AuthKey,
        seed: PrivateIdSeed,
        activation_time: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Channel {
    tag_key: TagKey,
    last_ctr_a: Option<u16>,
    ctr_b: u16,
    authenticated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Ring,
    ReverseRing,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TagResponse {
    Features { features: Vec<Feature>, ctr_b: u16 },
    Rang(TagEvent),
    Rekeyed { ctr_b: u16 },
    Ack { ctr_b: u16 },
}

/// Something the tag did that an observer could notice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagEvent {
    pub kind: Feature,
    pub characteristic: String,
}

#[derive(Debug)]
pub struct Tag {
    mac: MacAddr,
    tile_id: TileId,
    tdi: TdiRecord,
    phase: Phase,
    channel: Option<Channel>,
    config: TagConfig,
    rng: SimRng,
    pending_sres: Option<SresT>,
}

impl Tag {
    pub fn new(
        mac: MacAddr,
        model: &str,
        firmware: &str,
        hardware: &str,
        interim: InterimAuthKey,
        config: TagConfig,
        rng: SimRng,
    ) -> Result<Self, TagError> {
        let tile_id = TileId::from_mac(mac);
        Ok(Self {
            mac,
            tile_id,
            tdi: TdiRecord::new(tile_id, model, firmware, hardware)?,
            phase: Phase::Unactivated(interim),
            channel: None,
            config,
            rng,
            pending_sres: None,
        })
    }

    /// Test shortcut: skip the challenge-response and install `auth_key`.
    pub fn force_activate(&mut self, auth_key: AuthKey, activation_time: u64) {
        self.install_key(auth_key, activation_time);
    }

    fn install_key(&mut self, auth_key: AuthKey, activation_time: u64) {
        self.phase = Phase::Activated {
            seed: crypto::derive_private_id_seed(&auth_key, &self.tile_id),
            auth_key,
            activation_time,
        };
        self.channel = None;
    }

    pub fn tile_id(&self) -> TileId {
        self.tile_id
    }

    pub fn config(&self) -> TagConfig {
        self.config
    }

    pub fn phase(&self) -> &Phase {
        &self.phase
    }

    pub fn is_activated(&self) -> bool {
        matches!(self.phase, Phase::Activated { .. })
    }

    /// Introspection for agreement checks; never leaves the tag on air.
    pub fn auth_key(&self) -> Option<AuthKey> {
        match &self.phase {
            Phase::Activated { auth_key, .. } => Some(*auth_key),
            Phase::Unactivated(_) => None,
        }
    }

    pub fn activation_time(&self) -> Option<u64> {
        match &self.phase {
            Phase::Activated { activation_time, .. } => Some(*activation_time),
            Phase::Unactivated(_) => None,
        }
    }

    /// The factory MAC. Constant unless the randomized-MAC toggle is on.
    pub fn static_mac(&self) -> MacAddr {
        self.mac
    }

    /// MAC on air at `now`.
    pub fn mac_at(&self, now: u64) -> MacAddr {
        match (&self.phase, self.config.randomized_mac) {
            (Phase::Activated { seed, activation_time, .. }, true) => {
                let slot = now.saturating_sub(*activation_time) / crypto::ROTATION_PERIOD_SECS;
                let digest = Sha256::new()
                    .chain_update(b"mac")
                    .chain_update(seed.0)
                    .chain_update(slot.to_le_bytes())
                    .finalize();
                let mut mac = [0u8; 6];
                mac.copy_from_slice(&digest[..6]);
                // Locally administered, unicast.
                mac[0] = (mac[0] | 0x02) & 0xfe;
                MacAddr(mac)
            }
            _ => self.mac,
        }
    }

    pub fn advertise(&self, now: u64) -> Advertisement {
        match &self.phase {
            Phase::Unactivated(_) => Advertisement::pre_activation(self.mac, now),
            Phase::Activated { seed, activation_time, .. } => {
                let ctr = crypto::schedule_counter(*activation_time, now).unwrap_or(0);
                let id = crypto::private_id(seed, ctr).expect("counter is reduced mod schedule");
                Advertisement::activated(self.mac_at(now), id, now)
            }
        }
    }

    pub fn read_tdi(&self) -> TdiRecord {
        self.tdi.clone()
    }

    /// The TDI values keyed by characteristic UUID.
    pub fn tdi_characteristics(&self) -> [(&'static str, String); 4] {
        [
            (TILE_ID_CHAR_UUID, self.tdi.tile_id.to_hex()),
            (MODEL_CHAR_UUID, self.tdi.model.clone()),
            (FIRMWARE_CHAR_UUID, self.tdi.firmware.clone()),
            (HARDWARE_CHAR_UUID, self.tdi.hardware_version.clone()),
        ]
    }

    pub fn auth_challenge(&mut self, rand_a: &RandA) -> (RandT, SresT) {
        let mut rand_t = RandT([0; 10]);
        self.rng.fill_bytes(&mut rand_t.0);
        let sres = match &self.phase {
            Phase::Unactivated(interim) => {
                let s = crypto::derive_sres_activation(interim, rand_a, &rand_t, &self.tile_id);
                self.pending_sres = Some(s);
                s
            }
            Phase::Activated { auth_key, .. } => crypto::derive_sres_session(auth_key, rand_a, &rand_t),
        };
        (rand_t, sres)
    }

    /// Accepts only the sresT of the most recent challenge. A refusal
    /// discards it, so every attempt needs a fresh challenge.
    pub fn complete_activation(&mut self, sres_t: &SresT, now: u64) -> Result<(), TagError> {
        let interim = match &self.phase {
            Phase::Unactivated(k) => *k,
            Phase::Activated { .. } => return Err(TagError::State("already activated")),
        };
        match self.pending_sres.take() {
            Some(expected) if expected == *sres_t => {
                self.install_key(crypto::derive_auth_key(&interim, sres_t), now);
                Ok(())
            }
            _ => Err(TagError::ActivationRefused),
        }
    }

    pub fn open_channel(
        &mut self,
        channel_prefix: &[u8],
        channel_data: &[u8],
        toa_token: &ToaToken,
        rand_a: &RandA,
    ) -> Result<(), TagError> {
        let Phase::Activated { auth_key, .. } = &self.phase else {
            return Err(TagError::State("channel requires an activated tag"));
        };
        let tag_key = crypto::derive_tag_key(
            auth_key,
            rand_a,
            channel_data,
            channel_prefix,
            toa_token,
            self.config.channel_layout,
        )?;
        let mut ctr_b = [0u8; 2];
        self.rng.fill_bytes(&mut ctr_b);
        self.channel = Some(Channel {
            tag_key,
            last_ctr_a: None,
            ctr_b: u16::from_le_bytes(ctr_b),
            authenticated: false,
        });
        Ok(())
    }

    pub fn close_channel(&mut self) {
        self.channel = None;
    }

    pub fn channel_open(&self) -> bool {
        self.channel.is_some()
    }

    pub fn receive_owner_message(&mut self, msg: &[u8], mac: &MessageMac) -> Result<TagResponse, TagError> {
        let ctr_check = self.config.ctr_check;
        let ch = self.channel.as_mut().ok_or(TagError::State("no open channel"))?;
        if !crypto::verify_message_mac(&ch.tag_key, msg, mac) {
            return Err(TagError::AuthReject);
        }
        if let Some(last) = ch.last_ctr_a {
            if ctr_check && mac.ctr <= last {
                return Err(TagError::ReplayReject { got: mac.ctr, last });
            }
        }
        if !ch.authenticated && msg != OWNER_AUTH_MESSAGE {
            return Err(TagError::AuthReject);
        }
        ch.last_ctr_a = Some(mac.ctr);
        ch.ctr_b = ch.ctr_b.wrapping_add(1);
        let ctr_b = ch.ctr_b;

        if msg == OWNER_AUTH_MESSAGE {
            ch.authenticated = true;
            return Ok(TagResponse::Features {
                features: vec![Feature::Ring, Feature::ReverseRing],
                ctr_b,
            });
        }
        if msg == RING_COMMAND {
            return self.ring().map(TagResponse::Rang);
        }
        if msg.len() == 25 && msg[0] == REKEY_OPCODE {
            let key = AuthKey::from_slice(&msg[1..17])?;
            let activation = u64::from_le_bytes(msg[17..25].try_into().expect("8 bytes"));
            self.install_key(key, activation);
            return Ok(TagResponse::Rekeyed { ctr_b });
        }
        Ok(TagResponse::Ack { ctr_b })
    }

    pub fn ring(&self) -> Result<TagEvent, TagError> {
        match &self.channel {
            Some(ch) if ch.authenticated => Ok(TagEvent {
                kind: Feature::Ring,
                characteristic: SONG_CHAR_UUID.into(),
            }),
            _ => Err(TagError::State("ring requires an authenticated channel")),
        }
    }

    /// Button-initiated: the tag asks the phone to ring.
    pub fn reverse_ring(&self) -> Result<TagEvent, TagError> {
        if !self.is_activated() {
            return Err(TagError::State("reverse ring requires an activated tag"));
        }
        Ok(TagEvent {
            kind: Feature::ReverseRing,
            characteristic: REVERSE_RING_CHAR_UUID.into(),
        })
    }
}

/// Builds the re-key message body.
pub fn rekey_message(auth_key: &AuthKey, activation: u64) -> Vec<u8> {
    let mut m = Vec::with_capacity(25);
    m.push(REKEY_OPCODE);
    m.extend_from_slice(&auth_key.0);
    m.extend_from_slice(&activation.to_le_bytes());
    m
}
