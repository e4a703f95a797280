//! Template grammar producing small labeled corpora plus matching
//! annotation resources.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::TaggedUtterance;
use crate::features::ResourceText;
use crate::tags::SlotTag;

pub const INTENTS: [&str; 4] = ["play_music", "book_flight", "get_weather", "add_playlist"];

pub const SLOTS: [&str; 9] = [
    "artist", "year", "from_city", "to_city", "date", "playlist", "song", "condition", "city",
];

const TEMPLATES: &[(&str, &str)] = &[
    ("play_music", "play music from {year} by {artist}"),
    ("play_music", "play {song} by {artist}"),
    ("play_music", "play some {artist}"),
    ("play_music", "i want to hear {song}"),
    ("play_music", "play songs from {year}"),
    ("play_music", "put on {artist} from {year}"),
    ("play_music", "can you play {song}"),
    ("book_flight", "book a flight from {from_city} to {to_city}"),
    ("book_flight", "i want to fly from {from_city} to {to_city} {date}"),
    ("book_flight", "find flights to {to_city} {date}"),
    ("book_flight", "show me flights from {from_city} to {to_city} on {date}"),
    ("book_flight", "i need a ticket to {to_city} from {from_city}"),
    ("get_weather", "what is the weather in {city} {date}"),
    ("get_weather", "will it be {condition} in {city} {date}"),
    ("get_weather", "weather forecast for {city}"),
    ("get_weather", "how is the weather {date} in {city}"),
    ("get_weather", "is it going to be {condition} {date}"),
    ("add_playlist", "add {song} to my {playlist} playlist"),
    ("add_playlist", "add {artist} to {playlist}"),
    ("add_playlist", "put {song} by {artist} on my {playlist} playlist"),
    ("add_playlist", "add this track to {playlist}"),
];

const ARTISTS: &[&str] = &[
    "justin broadrick", "miles davis", "nina simone", "aretha franklin", "david bowie",
    "bjork", "christine mcvey", "john coltrane", "patti smith", "frank ocean",
    "kate bush", "prince", "erykah badu", "thom yorke", "joni mitchell", "bob marley",
];

const SONGS: &[&str] = &[
    "blue in green", "feeling good", "heroes", "river", "purple rain", "hurt",
    "wuthering heights", "redemption song", "so what", "respect", "because the night",
    "nights", "giant steps", "everything in its right place", "hyperballad", "tyrone",
];

const PLAYLISTS: &[&str] = &[
    "road trip", "chill vibes", "workout", "sunday morning", "focus", "party mix",
    "late night jazz", "throwback", "study beats", "dinner",
];

const CITIES: &[&str] = &[
    "baltimore", "dallas", "boston", "denver", "new york", "san francisco", "atlanta",
    "seattle", "chicago", "miami", "phoenix", "los angeles", "detroit", "houston",
    "portland", "las vegas",
];

const DATES: &[&str] = &[
    "tomorrow", "today", "monday", "tuesday", "friday", "next friday", "this weekend",
    "sunday", "next week", "tonight",
];

const CONDITIONS: &[&str] = &["rain", "snow", "sunny", "cold", "windy", "foggy", "hot", "cloudy"];

/// Extra everyday words for the dictionary (besides template words).
const COMMON: &[&str] = &[
    "for", "the", "and", "or", "not", "but", "with", "she", "he", "it", "was", "are",
    "you", "can", "may", "all", "any", "new", "old", "big", "car", "day", "end", "far",
    "few", "get", "got", "had", "has", "her", "him", "his", "how", "its", "let", "man",
    "now", "one", "our", "out", "own", "run", "say", "see", "set", "sit", "two", "use",
    "way", "who", "why", "yes", "yet", "sun", "hot",
];

pub struct ToyCorpora {
    pub train: Vec<TaggedUtterance>,
    pub dev: Vec<TaggedUtterance>,
    pub test: Vec<TaggedUtterance>,
    pub resources: ResourceText,
}

fn values(slot: &str) -> &'static [&'static str] {
    match slot {
        "artist" => ARTISTS,
        "song" => SONGS,
        "playlist" => PLAYLISTS,
        "from_city" | "to_city" | "city" => CITIES,
        "date" => DATES,
        "condition" => CONDITIONS,
        _ => &[],
    }
}

fn fill(template: &str, intent: &str, rng: &mut ChaCha8Rng) -> TaggedUtterance {
    let mut words = Vec::new();
    let mut tags = Vec::new();
    for tok in template.split_whitespace() {
        match tok.strip_prefix('{').and_then(|t| t.strip_suffix('}')) {
            Some(slot) => {
                let value = if slot == "year" {
                    rng.random_range(1960..2020).to_string()
                } else {
                    values(slot).choose(rng).expect("nonempty list").to_string()
                };
                for (k, w) in value.split_whitespace().enumerate() {
                    words.push(w.to_string());
                    tags.push(if k == 0 {
                        SlotTag::B(slot.to_string())
                    } else {
                        SlotTag::I(slot.to_string())
                    });
                }
            }
            None => {
                words.push(tok.to_string());
                tags.push(SlotTag::O);
            }
        }
    }
    TaggedUtterance::new(words, tags, intent).expect("templates are well formed")
}

/// `n` utterances; the first pass visits every template once so every
/// intent and slot type is realized as soon as `n` covers the templates.
fn split(n: usize, rng: &mut ChaCha8Rng) -> Vec<TaggedUtterance> {
    let mut out: Vec<TaggedUtterance> = (0..n)
        .map(|i| {
            let (intent, t) = if i < TEMPLATES.len() {
                TEMPLATES[i]
            } else {
                *TEMPLATES.choose(rng).expect("templates")
            };
            fill(t, intent, rng)
        })
        .collect();
    out.shuffle(rng);
    out
}

fn title(word: &str) -> String {
    let mut c = word.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

pub fn resources() -> ResourceText {
    let mut lexicon = vec!["I".to_string(), "McVey".to_string()];
    for name in ARTISTS.iter().chain(CITIES) {
        lexicon.extend(name.split_whitespace().map(title));
    }
    let mut gazetteer = String::new();
    let mut add = |list: &[&str], label: &str| {
        for p in list {
            gazetteer.push_str(&format!("{p}\t{label}\n"));
        }
    };
    add(ARTISTS, "PERSON");
    add(CITIES, "CITY");
    add(SONGS, "TITLE");
    add(PLAYLISTS, "MISC");
    add(DATES, "DATE");
    let mut dict: BTreeSet<String> = COMMON.iter().map(|s| s.to_string()).collect();
    for (_, t) in TEMPLATES {
        dict.extend(t.split_whitespace().filter(|w| !w.starts_with('{')).map(String::from));
    }
    ResourceText {
        lexicon: lexicon.join("\n") + "\n",
        gazetteer,
        dictionary: dict.into_iter().collect::<Vec<_>>().join("\n") + "\n",
    }
}

pub fn toy_grammar(seed: u64, n_train: usize, n_dev: usize, n_test: usize) -> ToyCorpora {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ToyCorpora {
        train: split(n_train, &mut rng),
        dev: split(n_dev, &mut rng),
        test: split(n_test, &mut rng),
        resources: resources(),
    }
}

/// "play music from 2005 by justin broadrick".
pub fn table1_example() -> TaggedUtterance {
    let words = "play music from 2005 by justin broadrick"
        .split(' ')
        .map(String::from)
        .collect();
    let tags = ["O", "O", "O", "B-year", "O", "B-artist", "I-artist"]
        .iter()
        .map(|t| t.parse().expect("valid tag"))
        .collect();
    TaggedUtterance::new(words, tags, "play_music").expect("well formed")
}
