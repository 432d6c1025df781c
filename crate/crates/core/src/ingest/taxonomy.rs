use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::IncidentRecord;
use crate::error::{Error, Result};

/// Level-2 crime category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Homicide,
    Rape,
    Robbery,
    Assault,
    Burglary,
    Theft,
    OtherProperty,
    Drug,
    WhiteCollar,
    Gambling,
    Arson,
    Unmapped,
}

/// Level-1 grouping of the taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level1 {
    Violent,
    Property,
    Drug,
    Gambling,
    Other,
}

impl Category {
    pub const ALL: [Category; 12] = [
        Category::Homicide,
        Category::Rape,
        Category::Robbery,
        Category::Assault,
        Category::Burglary,
        Category::Theft,
        Category::OtherProperty,
        Category::Drug,
        Category::WhiteCollar,
        Category::Gambling,
        Category::Arson,
        Category::Unmapped,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Homicide => "homicide",
            Category::Rape => "rape",
            Category::Robbery => "robbery",
            Category::Assault => "assault",
            Category::Burglary => "burglary",
            Category::Theft => "theft",
            Category::OtherProperty => "other_property",
            Category::Drug => "drug",
            Category::WhiteCollar => "white_collar",
            Category::Gambling => "gambling",
            Category::Arson => "arson",
            Category::Unmapped => "unmapped",
        }
    }

    pub fn level1(self) -> Level1 {
        match self {
            Category::Homicide | Category::Rape | Category::Robbery | Category::Assault => {
                Level1::Violent
            }
            Category::Burglary
            | Category::Theft
            | Category::OtherProperty
            | Category::WhiteCollar
            | Category::Arson => Level1::Property,
            Category::Drug => Level1::Drug,
            Category::Gambling => Level1::Gambling,
            Category::Unmapped => Level1::Other,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == key)
            .ok_or_else(|| Error::Invalid(format!("unknown level-2 category {s:?}")))
    }
}

/// Lowercase, trim and collapse internal whitespace runs to one space.
pub(crate) fn normalize(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleTarget {
    Descriptor,
    AgencyCode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    /// Normalised prefix.
    pub pattern: String,
    pub target: RuleTarget,
    pub category: Category,
}

impl Rule {
    fn matches(&self, record: &IncidentRecord) -> bool {
        match self.target {
            RuleTarget::Descriptor => record
                .offense_text
                .iter()
                .any(|t| normalize(t).starts_with(&self.pattern)),
            RuleTarget::AgencyCode => record
                .agency_code
                .as_deref()
                .is_some_and(|c| normalize(c).starts_with(&self.pattern)),
        }
    }
}

/// Ordered prefix rules; first match wins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryMap {
    rules: Vec<Rule>,
}

const NYC_MAP: &str = include_str!("../../data/nyc_category_map.tsv");

impl CategoryMap {
    /// Parses the tab-separated rule format and validates it.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rules = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(pattern), Some(cat), None) = (parts.next(), parts.next(), parts.next())
            else {
                return Err(Error::CategoryMap {
                    line: line_no,
                    message: "expected exactly two tab-separated columns".into(),
                });
            };
            let category: Category = cat.parse().map_err(|e: Error| Error::CategoryMap {
                line: line_no,
                message: e.to_string(),
            })?;
            let (target, pattern) = match pattern.trim().strip_prefix("code:") {
                Some(code) => (RuleTarget::AgencyCode, normalize(code)),
                None => (RuleTarget::Descriptor, normalize(pattern)),
            };
            if pattern.is_empty() {
                return Err(Error::CategoryMap {
                    line: line_no,
                    message: "empty pattern".into(),
                });
            }
            if let Some(prev) = rules
                .iter()
                .position(|r: &Rule| r.pattern == pattern && r.target == target)
            {
                return Err(Error::CategoryMap {
                    line: line_no,
                    message: format!("duplicate pattern {pattern:?} (rule {})", prev + 1),
                });
            }
            rules.push(Rule {
                pattern,
                target,
                category,
            });
        }
        if rules.is_empty() {
            return Err(Error::CategoryMap {
                line: 0,
                message: "no rules".into(),
            });
        }
        Ok(Self { rules })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// The bundled NYPD complaint-data mapping.
    pub fn nyc_default() -> Self {
        Self::parse(NYC_MAP).expect("bundled category map is valid")
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    /// Classifies one record; `Unmapped` when no rule matches.
    pub fn classify(&self, record: &IncidentRecord) -> Category {
        self.rules
            .iter()
            .find(|r| r.matches(record))
            .map_or(Category::Unmapped, |r| r.category)
    }

    /// Maps a single descriptor string (no agency code).
    pub fn classify_descriptor(&self, descriptor: &str) -> Option<Category> {
        let norm = normalize(descriptor);
        self.rules
            .iter()
            .filter(|r| r.target == RuleTarget::Descriptor)
            .find(|r| norm.starts_with(&r.pattern))
            .map(|r| r.category)
    }

    /// Checks totality over a vocabulary file (one descriptor per line): every
    /// entry must hit some rule, explicit `unmapped` rules included.
    pub fn check_vocabulary(&self, vocabulary: &str) -> Result<()> {
        let missing: Vec<String> = vocabulary
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .filter(|l| self.classify_descriptor(l).is_none())
            .map(str::to_string)
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "{} vocabulary descriptor(s) have no rule: {}",
                missing.len(),
                missing.join("; ")
            )))
        }
    }
}

/// Free-function form of [`CategoryMap::classify`].
pub fn classify_incident(record: &IncidentRecord, map: &CategoryMap) -> Category {
    map.classify(record)
}

/// A [`CategoryMap`] plus an audit counter of unmapped descriptors.
#[derive(Debug, Clone)]
pub struct Classifier<'a> {
    map: &'a CategoryMap,
    unmapped: BTreeMap<String, usize>,
}

impl<'a> Classifier<'a> {
    pub fn new(map: &'a CategoryMap) -> Self {
        Self {
            map,
            unmapped: BTreeMap::new(),
        }
    }

    pub fn classify(&mut self, record: &IncidentRecord) -> Category {
        let cat = self.map.classify(record);
        if cat == Category::Unmapped {
            let key = record
                .offense_text
                .iter()
                .map(|t| normalize(t))
                .collect::<Vec<_>>()
                .join(" | ");
            *self.unmapped.entry(key).or_default() += 1;
        }
        cat
    }

    pub fn unmapped(&self) -> &BTreeMap<String, usize> {
        &self.unmapped
    }

    pub fn into_unmapped(self) -> BTreeMap<String, usize> {
        self.unmapped
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn rec(texts: &[&str]) -> IncidentRecord {
        IncidentRecord {
            city_id: "NYC".into(),
            event_date: NaiveDate::from_ymd_opt(2019, 1, 1).unwrap(),
            offense_text: texts.iter().map(|s| s.to_string()).collect(),
            agency_code: None,
        }
    }

    #[test]
    fn appendix_examples() {
        let map = CategoryMap::nyc_default();
        assert_eq!(map.classify(&rec(&["Larceny,petit By Check Use"])), Category::Theft);
        assert_eq!(map.classify(&rec(&["Controlled Substance, Sale 4"])), Category::Drug);
        assert_eq!(map.classify(&rec(&["Burglary, Truck Day"])), Category::Burglary);
    }

    #[test]
    fn nyc_rows_map_as_tabulated() {
        let map = CategoryMap::nyc_default();
        let cases = [
            (&["MURDER & NON-NEGL. MANSLAUGHTER", "FELONY", ""][..], Category::Homicide),
            (&["HOMICIDE-NEGLIGENT-VEHICLE", "FELONY", "HOMICIDE, NEGLIGENT, VEHICLE"], Category::Homicide),
            (&["RAPE", "FELONY", "RAPE 1"], Category::Rape),
            (&["SEX CRIMES", "FELONY", "SODOMY 1"], Category::Rape),
            (&["ROBBERY", "FELONY", "ROBBERY,OPEN AREA UNCLASSIFIED"], Category::Robbery),
            (&["FELONY ASSAULT", "FELONY", "ASSAULT 2,1,UNCLASSIFIED"], Category::Assault),
            (&["MISCELLANEOUS PENAL LAW", "FELONY", "AGGRAVATED HARASSMENT 1"], Category::Assault),
            (&["GRAND LARCENY OF MOTOR VEHICLE", "FELONY", "LARCENY,GRAND OF AUTO"], Category::Theft),
            (&["DANGEROUS DRUGS", "MISDEMEANOR", "MARIJUANA, POSSESSION 4 & 5"], Category::Drug),
            (&["OTHER OFFENSES RELATED TO THEFT", "MISDEMEANOR", "THEFT OF SERVICES, UNCLASSIFIE"], Category::Theft),
        ];
        for (texts, want) in cases {
            assert_eq!(map.classify(&rec(texts)), want, "{texts:?}");
        }
    }

    #[test]
    fn normalisation_is_case_and_space_insensitive() {
        let map = CategoryMap::nyc_default();
        assert_eq!(
            map.classify(&rec(&["   controlled    SUBSTANCE,possess."])),
            Category::Drug
        );
    }

    #[test]
    fn first_match_wins() {
        let map = CategoryMap::parse("larceny\ttheft\nlarceny,grand\tburglary\n").unwrap();
        assert_eq!(map.classify(&rec(&["LARCENY,GRAND FROM PERSON"])), Category::Theft);
        let map = CategoryMap::parse("larceny,grand\tburglary\nlarceny\ttheft\n").unwrap();
        assert_eq!(map.classify(&rec(&["LARCENY,GRAND FROM PERSON"])), Category::Burglary);
    }

    #[test]
    fn unmapped_is_counted() {
        let map = CategoryMap::nyc_default();
        let mut c = Classifier::new(&map);
        assert_eq!(c.classify(&rec(&["VEHICLE AND TRAFFIC LAWS"])), Category::Unmapped);
        assert_eq!(c.classify(&rec(&["VEHICLE AND TRAFFIC LAWS"])), Category::Unmapped);
        assert_eq!(c.classify(&rec(&["ROBBERY"])), Category::Robbery);
        assert_eq!(c.unmapped().get("vehicle and traffic laws"), Some(&2));
    }

    #[test]
    fn agency_code_rules() {
        let map = CategoryMap::parse("code:13\tassault\nrobbery\trobbery\n").unwrap();
        let mut r = rec(&["SOMETHING"]);
        r.agency_code = Some("13A".into());
        assert_eq!(map.classify(&r), Category::Assault);
        r.agency_code = None;
        assert_eq!(map.classify(&r), Category::Unmapped);
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(
            CategoryMap::parse("robbery\tlarceny\n"),
            Err(Error::CategoryMap { line: 1, .. })
        ));
        assert!(matches!(
            CategoryMap::parse("# c\nrobbery\n"),
            Err(Error::CategoryMap { line: 2, .. })
        ));
        assert!(matches!(
            CategoryMap::parse("robbery\trobbery\nROBBERY\ttheft\n"),
            Err(Error::CategoryMap { line: 2, .. })
        ));
        assert!(CategoryMap::parse("# only comments\n").is_err());
    }

    #[test]
    fn vocabulary_totality() {
        let map = CategoryMap::parse("robbery\trobbery\nvehicle\tunmapped\n").unwrap();
        map.check_vocabulary("ROBBERY,BANK\nVehicle and traffic\n").unwrap();
        let err = map.check_vocabulary("ROBBERY\nKIDNAPPING\n").unwrap_err();
        assert!(err.to_string().contains("KIDNAPPING"));
    }

    #[test]
    fn level1_grouping() {
        assert_eq!(Category::Assault.level1(), Level1::Violent);
        assert_eq!(Category::Theft.level1(), Level1::Property);
        assert_eq!(Category::Drug.level1(), Level1::Drug);
        for c in Category::ALL {
            assert_eq!(c.as_str().parse::<Category>().unwrap(), c);
        }
    }
}
