//! Descriptors of the public HSI/LiDAR benchmark scenes: class names,
//! training/test counts per class, and patch sizes.

use super::SplitSpec;

#[derive(Debug, Clone, Copy)]
pub struct ClassSplit {
    pub name: &'static str,
    pub train: usize,
    pub test: usize,
}

impl ClassSplit {
    pub fn total(&self) -> usize {
        self.train + self.test
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DatasetPreset {
    pub name: &'static str,
    /// Spectral band count, when the scene's description states it.
    pub bands: Option<usize>,
    pub patch_size: usize,
    pub classes: &'static [ClassSplit],
}

impl DatasetPreset {
    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.to_string()).collect()
    }

    pub fn train_total(&self) -> usize {
        self.classes.iter().map(|c| c.train).sum()
    }

    pub fn test_total(&self) -> usize {
        self.classes.iter().map(|c| c.test).sum()
    }

    pub fn split_spec(&self, seed: u64) -> SplitSpec {
        SplitSpec::per_class(self.classes.iter().map(|c| c.train).collect(), seed)
    }

    pub fn by_name(name: &str) -> Option<&'static DatasetPreset> {
        [&HOUSTON_2013, &TRENTO, &MUUFL]
            .into_iter()
            .find(|p| p.name.eq_ignore_ascii_case(name))
    }
}

const fn cs(name: &'static str, train: usize, test: usize) -> ClassSplit {
    ClassSplit { name, train, test }
}

pub const HOUSTON_2013: DatasetPreset = DatasetPreset {
    name: "houston2013",
    bands: Some(144),
    patch_size: 9,
    classes: &[
        cs("Healthy grass", 198, 1053),
        cs("Stressed grass", 190, 1064),
        cs("Synthetic grass", 192, 505),
        cs("Tree", 188, 1056),
        cs("Soil", 186, 1056),
        cs("Water", 182, 143),
        cs("Residential", 196, 1072),
        cs("Commercial", 191, 1053),
        cs("Road", 193, 1059),
        cs("Highway", 191, 1036),
        cs("Railway", 181, 1054),
        cs("Parking lot 1", 192, 1041),
        cs("Parking lot 2", 184, 285),
        cs("Tennis court", 181, 247),
        cs("Running track", 187, 473),
    ],
};

pub const TRENTO: DatasetPreset = DatasetPreset {
    name: "trento",
    bands: Some(48),
    patch_size: 9,
    classes: &[
        cs("Apple trees", 129, 3905),
        cs("Buildings", 125, 2778),
        cs("Ground", 105, 374),
        cs("Wood", 154, 8969),
        cs("Vineyard", 184, 10317),
        cs("Roads", 122, 3052),
    ],
};

pub const MUUFL: DatasetPreset = DatasetPreset {
    name: "muufl",
    bands: None,
    patch_size: 3,
    classes: &[
        cs("Trees", 150, 23246),
        cs("Mostly grass", 150, 4270),
        cs("Mixed ground surface", 150, 6882),
        cs("Dirt and sand", 150, 1826),
        cs("Road", 150, 6687),
        cs("Water", 150, 466),
        cs("Building shadow", 150, 2233),
        cs("Building", 150, 6240),
        cs("Sidewalk", 150, 1385),
        cs("Yellow curb", 150, 183),
        cs("Cloth panels", 150, 269),
    ],
};

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_totals() {
        assert_eq!((HOUSTON_2013.train_total(), HOUSTON_2013.test_total()), (2832, 12197));
        assert_eq!((TRENTO.train_total(), TRENTO.test_total()), (819, 29395));
        assert_eq!((MUUFL.train_total(), MUUFL.test_total()), (1650, 53687));
        assert_eq!(HOUSTON_2013.classes.len(), 15);
        assert_eq!(HOUSTON_2013.classes[0].total(), 1251);
        assert!(DatasetPreset::by_name("Houston2013").is_some());
    }
}
