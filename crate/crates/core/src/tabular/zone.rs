use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::FrameError;

const DEFAULT_MAP: &str = include_str!("../../assets/state_zones.tsv");

/// Regional grouping of states used for sample splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Zone {
    North,
    NorthEast,
    Central,
    East,
    West,
    South,
}

impl Zone {
    pub const ALL: [Zone; 6] = [
        Zone::North,
        Zone::NorthEast,
        Zone::Central,
        Zone::East,
        Zone::West,
        Zone::South,
    ];

    /// 1-based code in the survey's zone numbering.
    pub fn code(self) -> i64 {
        self as i64 + 1
    }

    pub fn from_code(code: i64) -> Option<Zone> {
        Zone::ALL.get(usize::try_from(code - 1).ok()?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Zone::North => "North",
            Zone::NorthEast => "NorthEast",
            Zone::Central => "Central",
            Zone::East => "East",
            Zone::West => "West",
            Zone::South => "South",
        }
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Zone {
    type Err = FrameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        let key = key.strip_suffix("zone").unwrap_or(&key);
        match key {
            "north" => Ok(Zone::North),
            "northeast" | "northeastern" => Ok(Zone::NorthEast),
            "central" => Ok(Zone::Central),
            "east" | "eastern" => Ok(Zone::East),
            "west" | "western" => Ok(Zone::West),
            "south" | "southern" => Ok(Zone::South),
            _ => Err(FrameError::UnknownZone(s.to_string())),
        }
    }
}

/// State code → zone table, read from an editable text asset.
///
/// Format: one state per line, `code<TAB>name<TAB>zone`; `#` starts a comment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZoneMap {
    states: BTreeMap<u16, (String, Zone)>,
}

impl Default for ZoneMap {
    fn default() -> Self {
        ZoneMap::parse(DEFAULT_MAP).expect("bundled zone map is valid")
    }
}

impl ZoneMap {
    pub fn parse(text: &str) -> Result<Self, FrameError> {
        let mut states = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let bad = |reason: &str| FrameError::InvalidZoneMap {
                line: line_no,
                reason: reason.to_string(),
            };
            let parts: Vec<&str> = content.split('\t').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(bad("expected code<TAB>name<TAB>zone"));
            }
            let code: u16 = parts[0].parse().map_err(|_| bad("state code is not an integer"))?;
            let zone: Zone = parts[2].parse().map_err(|_| bad("unknown zone"))?;
            if states.insert(code, (parts[1].to_string(), zone)).is_some() {
                return Err(bad("duplicate state code"));
            }
        }
        Ok(ZoneMap { states })
    }

    pub fn from_path(path: &Path) -> Result<Self, FrameError> {
        let text = std::fs::read_to_string(path).map_err(|source| FrameError::Io {
            path: path.display().to_string(),
            source,
        })?;
        ZoneMap::parse(&text)
    }

    pub fn zone_of(&self, state: u16) -> Result<Zone, FrameError> {
        self.states
            .get(&state)
            .map(|(_, z)| *z)
            .ok_or(FrameError::UnmappedState(state))
    }

    pub fn state_name(&self, state: u16) -> Option<&str> {
        self.states.get(&state).map(|(n, _)| n.as_str())
    }

    pub fn state_codes(&self) -> impl Iterator<Item = u16> + '_ {
        self.states.keys().copied()
    }

    pub fn states_in(&self, zone: Zone) -> Vec<u16> {
        self.states
            .iter()
            .filter(|(_, (_, z))| *z == zone)
            .map(|(c, _)| *c)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code_of(map: &ZoneMap, name: &str) -> u16 {
        map.states
            .iter()
            .find(|(_, (n, _))| n == name)
            .map(|(c, _)| *c)
            .unwrap()
    }

    #[test]
    fn published_assignments() {
        let map = ZoneMap::default();
        assert_eq!(map.zone_of(code_of(&map, "Kerala")).unwrap(), Zone::South);
        assert_eq!(map.zone_of(code_of(&map, "Assam")).unwrap(), Zone::NorthEast);
        assert_eq!(map.zone_of(code_of(&map, "Haryana")).unwrap(), Zone::North);
        assert_eq!(map.zone_of(code_of(&map, "West Bengal")).unwrap(), Zone::East);
    }

    #[test]
    fn union_territories_are_unmapped() {
        let map = ZoneMap::default();
        // Delhi and Chandigarh
        for ut in [25u16, 6] {
            assert!(matches!(map.zone_of(ut), Err(FrameError::UnmappedState(c)) if c == ut));
        }
    }

    #[test]
    fn every_state_in_exactly_one_zone() {
        let map = ZoneMap::default();
        let total: usize = Zone::ALL.iter().map(|z| map.states_in(*z).len()).sum();
        assert_eq!(total, map.len());
        assert_eq!(map.len(), 29);
        let sizes: Vec<usize> = Zone::ALL.iter().map(|z| map.states_in(*z).len()).collect();
        assert_eq!(sizes, vec![5, 8, 4, 4, 3, 5]);
    }

    #[test]
    fn zone_codes_and_names() {
        for z in Zone::ALL {
            assert_eq!(Zone::from_code(z.code()), Some(z));
            assert_eq!(z.name().parse::<Zone>().unwrap(), z);
        }
        assert_eq!("North East Zone".parse::<Zone>().unwrap(), Zone::NorthEast);
        assert_eq!(Zone::from_code(0), None);
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        assert!(ZoneMap::parse("1\tA\tNorth\n1\tB\tSouth\n").is_err());
        assert!(ZoneMap::parse("x\tA\tNorth\n").is_err());
        assert!(ZoneMap::parse("1\tA\tMoon\n").is_err());
        let custom = ZoneMap::parse("# custom\n7\tSomewhere\tWest\n").unwrap();
        assert_eq!(custom.zone_of(7).unwrap(), Zone::West);
    }
}
