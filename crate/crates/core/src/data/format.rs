//! Dataset file layout (integers little-endian):
//!
//! ```text
//! magic          8 bytes  "MASKMADS"
//! version        u32
//! scenarios      u32, then per scenario: len u32 + TOML text (utf-8)
//! episodes       u64
//! per episode:   len u32, block (len bytes), crc32 u32 of the block
//! ```
//!
//! Episode block:
//!
//! ```text
//! scenario index u32, seed u64, outcome u8 (0 ongoing, 1 win, 2 loss, 3 draw),
//! return f64, step count u32, then per step:
//!   n u16
//!   n × unit: type u8, team u8 (0 ally, 1 enemy), x i16, y i16, hp u16,
//!             cooldown u16, alive u8, last action u16 (0xFFFF = none)
//!   n × action u16
//!   n × availability: ceil((K_intr + n) / 8) bytes, bit k of byte k/8 (LSB first)
//!   n × visibility:   ceil(n / 8) bytes, same bit order
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{DataError, EpisodeRecord, StepRecord};
use crate::action::{ActionId, K_INTR};
use crate::arena::{Outcome, ScenarioConfig, Team, Unit, UnitType};

pub const DATASET_MAGIC: [u8; 8] = *b"MASKMADS";
pub const DATASET_VERSION: u32 = 1;

const NO_ACTION: u16 = u16::MAX;

fn put_bits(out: &mut Vec<u8>, bits: &[bool]) {
    for chunk in bits.chunks(8) {
        let mut b = 0u8;
        for (k, &on) in chunk.iter().enumerate() {
            if on {
                b |= 1 << k;
            }
        }
        out.push(b);
    }
}

fn kind_code(k: UnitType) -> u8 {
    k.one_hot_index() as u8
}

fn kind_of(code: u8) -> Result<UnitType, DataError> {
    Ok(match code {
        0 => UnitType::Fighter,
        1 => UnitType::Healer,
        2 => UnitType::Tank,
        3 => UnitType::Reserved,
        _ => return Err(DataError::Format(format!("unit type code {code}"))),
    })
}

fn outcome_code(o: Outcome) -> u8 {
    match o {
        Outcome::Ongoing => 0,
        Outcome::Win => 1,
        Outcome::Loss => 2,
        Outcome::Draw => 3,
    }
}

fn small<T: TryFrom<i64>>(v: i64, what: &str) -> Result<T, DataError> {
    T::try_from(v).map_err(|_| DataError::Format(format!("{what} {v} out of range")))
}

fn encode_episode(ep: &EpisodeRecord, scenario_index: u32) -> Result<Vec<u8>, DataError> {
    let mut out = Vec::new();
    out.extend_from_slice(&scenario_index.to_le_bytes());
    out.extend_from_slice(&ep.seed.to_le_bytes());
    out.push(outcome_code(ep.outcome));
    out.extend_from_slice(&ep.episode_return.to_le_bytes());
    out.extend_from_slice(&small::<u32>(ep.steps.len() as i64, "step count")?.to_le_bytes());
    for step in &ep.steps {
        let n = step.n();
        if step.actions.len() != n || step.availability.len() != n * (K_INTR + n) || step.visibility.len() != n * n {
            return Err(DataError::Format("step record fields disagree on unit count".into()));
        }
        out.extend_from_slice(&small::<u16>(n as i64, "unit count")?.to_le_bytes());
        for u in &step.units {
            out.push(kind_code(u.kind));
            out.push(matches!(u.team, Team::Enemy) as u8);
            out.extend_from_slice(&small::<i16>(u.x as i64, "x")?.to_le_bytes());
            out.extend_from_slice(&small::<i16>(u.y as i64, "y")?.to_le_bytes());
            out.extend_from_slice(&small::<u16>(u.hp as i64, "hp")?.to_le_bytes());
            out.extend_from_slice(&small::<u16>(u.cooldown as i64, "cooldown")?.to_le_bytes());
            out.push(u.alive as u8);
            let last = match u.last_action {
                Some(a) => small::<u16>(a.index() as i64, "action")?,
                None => NO_ACTION,
            };
            out.extend_from_slice(&last.to_le_bytes());
        }
        for a in &step.actions {
            out.extend_from_slice(&small::<u16>(a.index() as i64, "action")?.to_le_bytes());
        }
        for i in 0..n {
            put_bits(&mut out, step.available(i));
        }
        for i in 0..n {
            put_bits(&mut out, &step.visibility[i * n..(i + 1) * n]);
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(DataError::Format("episode block ends early".into()));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DataError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, DataError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn i16(&mut self) -> Result<i16, DataError> {
        Ok(i16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn bits(&mut self, count: usize) -> Result<Vec<bool>, DataError> {
        let bytes = self.take(count.div_ceil(8))?;
        Ok((0..count).map(|k| bytes[k / 8] >> (k % 8) & 1 == 1).collect())
    }
}

fn decode_episode(block: &[u8], scenarios: &[ScenarioConfig]) -> Result<EpisodeRecord, DataError> {
    let mut r = Cursor { buf: block, pos: 0 };
    let idx = r.u32()? as usize;
    let scenario = scenarios
        .get(idx)
        .ok_or_else(|| DataError::Format(format!("scenario index {idx} out of table")))?
        .id
        .clone();
    let seed = r.u64()?;
    let outcome = match r.u8()? {
        0 => Outcome::Ongoing,
        1 => Outcome::Win,
        2 => Outcome::Loss,
        3 => Outcome::Draw,
        c => return Err(DataError::Format(format!("outcome code {c}"))),
    };
    let episode_return = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let count = r.u32()? as usize;
    let mut steps = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u16()? as usize;
        let mut units = Vec::with_capacity(n);
        for _ in 0..n {
            let kind = kind_of(r.u8()?)?;
            let team = if r.u8()? == 0 { Team::Ally } else { Team::Enemy };
            let x = r.i16()? as i32;
            let y = r.i16()? as i32;
            let hp = r.u16()? as u32;
            let cooldown = r.u16()? as u32;
            let alive = r.u8()? != 0;
            let last = r.u16()?;
            let last_action = (last != NO_ACTION).then_some(ActionId(last as usize));
            units.push(Unit { kind, team, x, y, hp, cooldown, alive, last_action });
        }
        let actions = (0..n).map(|_| r.u16().map(|a| ActionId(a as usize))).collect::<Result<_, _>>()?;
        let mut availability = Vec::with_capacity(n * (K_INTR + n));
        for _ in 0..n {
            availability.extend(r.bits(K_INTR + n)?);
        }
        let mut visibility = Vec::with_capacity(n * n);
        for _ in 0..n {
            visibility.extend(r.bits(n)?);
        }
        steps.push(StepRecord { units, actions, availability, visibility });
    }
    if r.pos != block.len() {
        return Err(DataError::Format("trailing bytes in episode block".into()));
    }
    Ok(EpisodeRecord { scenario, seed, steps, outcome, episode_return })
}

/// Streaming writer; the episode count is fixed up front.
pub struct DatasetWriter {
    out: BufWriter<File>,
    index: HashMap<String, u32>,
    expected: u64,
    written: u64,
}

impl DatasetWriter {
    pub fn create(path: &Path, scenarios: &[ScenarioConfig], episodes: u64) -> Result<Self, DataError> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(&DATASET_MAGIC)?;
        out.write_all(&DATASET_VERSION.to_le_bytes())?;
        out.write_all(&(scenarios.len() as u32).to_le_bytes())?;
        let mut index = HashMap::new();
        for (k, s) in scenarios.iter().enumerate() {
            let text = s.to_toml();
            out.write_all(&(text.len() as u32).to_le_bytes())?;
            out.write_all(text.as_bytes())?;
            if index.insert(s.id.clone(), k as u32).is_some() {
                return Err(DataError::Format(format!("duplicate scenario id {}", s.id)));
            }
        }
        out.write_all(&episodes.to_le_bytes())?;
        Ok(DatasetWriter { out, index, expected: episodes, written: 0 })
    }

    pub fn write(&mut self, ep: &EpisodeRecord) -> Result<(), DataError> {
        if self.written == self.expected {
            return Err(DataError::Format(format!("more than the declared {} episodes", self.expected)));
        }
        let idx = *self
            .index
            .get(&ep.scenario)
            .ok_or_else(|| DataError::Format(format!("scenario {} not in table", ep.scenario)))?;
        let block = encode_episode(ep, idx)?;
        self.out.write_all(&(block.len() as u32).to_le_bytes())?;
        self.out.write_all(&block)?;
        self.out.write_all(&crc32fast::hash(&block).to_le_bytes())?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), DataError> {
        if self.written != self.expected {
            return Err(DataError::Format(format!("declared {} episodes, wrote {}", self.expected, self.written)));
        }
        self.out.flush()?;
        self.out.get_ref().sync_all()?;
        Ok(())
    }
}

/// Streaming reader: the header is parsed on open, episodes are decoded
/// one at a time by the iterator.
pub struct DatasetReader<R: Read> {
    input: R,
    scenarios: Vec<ScenarioConfig>,
    total: u64,
    read: u64,
}

fn eof_as_checksum(e: std::io::Error, what: &str) -> DataError {
    if e.kind() == ErrorKind::UnexpectedEof {
        DataError::Checksum(format!("{what} (file truncated)"))
    } else {
        DataError::Io(e)
    }
}

impl DatasetReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self, DataError> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: Read> DatasetReader<R> {
    pub fn new(mut input: R) -> Result<Self, DataError> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(|e| eof_as_checksum(e, "header"))?;
        if magic != DATASET_MAGIC {
            return Err(DataError::BadMagic);
        }
        let version = read_u32(&mut input, "header")?;
        if version != DATASET_VERSION {
            return Err(DataError::Version { found: version, expected: DATASET_VERSION });
        }
        let count = read_u32(&mut input, "scenario table")?;
        let mut scenarios = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = read_u32(&mut input, "scenario table")? as usize;
            let mut text = vec![0u8; len];
            input.read_exact(&mut text).map_err(|e| eof_as_checksum(e, "scenario table"))?;
            let text = String::from_utf8(text).map_err(|_| DataError::Format("scenario text is not utf-8".into()))?;
            scenarios.push(ScenarioConfig::from_toml(&text)?);
        }
        let mut total = [0u8; 8];
        input.read_exact(&mut total).map_err(|e| eof_as_checksum(e, "header"))?;
        Ok(DatasetReader { input, scenarios, total: u64::from_le_bytes(total), read: 0 })
    }

    pub fn scenarios(&self) -> &[ScenarioConfig] {
        &self.scenarios
    }

    pub fn episode_count(&self) -> u64 {
        self.total
    }

    fn next_episode(&mut self) -> Result<EpisodeRecord, DataError> {
        let what = format!("episode {}", self.read);
        let len = read_u32(&mut self.input, &what)? as usize;
        let mut block = vec![0u8; len];
        self.input.read_exact(&mut block).map_err(|e| eof_as_checksum(e, &what))?;
        let crc = read_u32(&mut self.input, &what)?;
        if crc32fast::hash(&block) != crc {
            return Err(DataError::Checksum(what));
        }
        decode_episode(&block, &self.scenarios)
    }
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32, DataError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| eof_as_checksum(e, what))?;
    Ok(u32::from_le_bytes(b))
}

impl<R: Read> Iterator for DatasetReader<R> {
    type Item = Result<EpisodeRecord, DataError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.read >= self.total {
            return None;
        }
        let ep = self.next_episode();
        // stop after the first error instead of reading garbage
        self.read = if ep.is_ok() { self.read + 1 } else { self.total };
        Some(ep)
    }
}

pub fn write_dataset(path: &Path, scenarios: &[ScenarioConfig], episodes: &[EpisodeRecord]) -> Result<(), DataError> {
    let mut w = DatasetWriter::create(path, scenarios, episodes.len() as u64)?;
    for ep in episodes {
        w.write(ep)?;
    }
    w.finish()
}

pub fn read_dataset(path: &Path) -> Result<(Vec<ScenarioConfig>, Vec<EpisodeRecord>), DataError> {
    let reader = DatasetReader::open(path)?;
    let scenarios = reader.scenarios().to_vec();
    let episodes = reader.collect::<Result<Vec<_>, _>>()?;
    Ok((scenarios, episodes))
}
