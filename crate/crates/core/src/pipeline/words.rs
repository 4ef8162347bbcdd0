//! Built-in seed words used when the config supplies none.

pub const SEED_WORDS: &[&str] = &[
    "TASTE", "FRAGILE", "HARBOR", "LANTERN", "MEADOW", "CANVAS", "BRIDGE", "COPPER", "VELVET",
    "SUMMIT", "ORCHID", "PEBBLE", "RIVER", "THUNDER", "MARBLE", "GARDEN", "FALCON", "SILVER",
    "CASTLE", "BREEZE", "ANCHOR", "COMET", "DESERT", "EMBER", "FOREST", "GLACIER", "HONEY",
    "ISLAND", "JASMINE", "KETTLE", "LAGOON", "MIRROR", "NECTAR", "OPAL", "PRAIRIE", "QUARTZ",
    "RIBBON", "SAFFRON", "TIMBER", "UMBRA", "VALLEY", "WILLOW", "YONDER", "ZEPHYR", "BAKERY",
    "CIRCUS", "DOMINO", "ESPRESSO", "FIESTA", "GALAXY", "HORIZON", "IGLOO", "JUNGLE", "KOALA",
    "LEMON", "MOSAIC", "NOMAD", "OCEAN", "PIXEL", "QUILL", "ROCKET", "SPHINX", "TULIP",
    "UNICORN", "VOYAGE", "WALRUS", "YOGURT", "ZIGZAG", "OPEN", "SALE", "CAFE", "HOTEL",
];
