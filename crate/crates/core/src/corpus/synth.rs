//! Seeded template-grammar dialog corpus.
//!
//! Each exchange samples one user intent uniformly; the system reply is
//! realized from a fixed action whose act set depends only on that intent, so
//! the context-to-act mapping is learnable. A share of the unlabeled dialogs
//! can be drawn from an unrelated chit-chat grammar instead.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{map_label, DaLabelVector, DialogRecord, SchemaMapping, Turn, UnifiedDa};
use crate::autodiff::mix_words;
use crate::model::Role;
use crate::{Error, Result};

use UnifiedDa as D;

/// System actions and the unified acts they realize.
pub const SYSTEM_ACTIONS: &[(&str, &[UnifiedDa])] = &[
    ("greet_back", &[D::Hi]),
    ("introduce", &[D::Welcome]),
    ("ask_food", &[D::Request]),
    ("confirm_food_ask_area", &[D::ImplConfirm, D::Request]),
    ("offer_venue", &[D::Offer]),
    ("choose_between", &[D::Select]),
    ("ask_alternative", &[D::Reqalts]),
    ("confirm_open", &[D::Affirm]),
    ("deny_closed", &[D::Negate]),
    ("unsure_check", &[D::NotSure, D::ExplConfirm]),
    ("give_phone", &[D::Inform]),
    ("booked", &[D::NotifySuccess]),
    ("booking_failed", &[D::NotifyFailure]),
    ("farewell", &[D::Bye, D::ThankYou]),
    ("not_understood", &[D::DontUnderstand]),
    ("ask_repeat", &[D::Repeat]),
    ("suggest", &[D::Propose]),
    ("give_directions", &[D::Direct]),
    ("check_area", &[D::ExplConfirm]),
];

struct Intent {
    name: &'static str,
    action: &'static str,
    user: &'static [&'static str],
    system: &'static [&'static str],
}

const INTENTS: &[Intent] = &[
    Intent {
        name: "greet",
        action: "greet_back",
        user: &["hello", "hi there", "good evening", "hello , anyone there"],
        system: &["hello , how can i help you", "hi , what can i do for you"],
    },
    Intent {
        name: "capabilities",
        action: "introduce",
        user: &["what can you do", "what is this service", "how does this work"],
        system: &[
            "welcome to the restaurant line , i can find and book places",
            "welcome , i help you find and book restaurants",
        ],
    },
    Intent {
        name: "find_vague",
        action: "ask_food",
        user: &["i need a place to eat", "can you find me a restaurant", "i am looking for somewhere to eat"],
        system: &["what kind of food would you like", "which type of food do you want"],
    },
    Intent {
        name: "find_food",
        action: "confirm_food_ask_area",
        user: &["i want {food} food", "find me a {food} restaurant", "something {food} please"],
        system: &["{food} food , which area do you prefer", "a {food} place , what part of town"],
    },
    Intent {
        name: "find_full",
        action: "offer_venue",
        user: &[
            "i want a {price} {food} restaurant in the {area}",
            "find a {price} {food} place in the {area}",
        ],
        system: &[
            "{name} is a {price} {food} place in the {area}",
            "i have {name} , it serves {food} food in the {area}",
        ],
    },
    Intent {
        name: "which_ones",
        action: "choose_between",
        user: &["which ones do you have", "what are my options", "list the choices"],
        system: &["would you like {name} or {name2}", "there is {name} or {name2} , which one"],
    },
    Intent {
        name: "anything_else",
        action: "ask_alternative",
        user: &["do you have anything else", "i do not like that one", "show me something different"],
        system: &["is there another kind of food you would like", "should i look for a different kind of place"],
    },
    Intent {
        name: "is_open",
        action: "confirm_open",
        user: &["is {name} open today", "is {name} open tonight"],
        system: &["yes , {name} is open", "yes it is open all evening"],
    },
    Intent {
        name: "is_closed",
        action: "deny_closed",
        user: &["is {name} closed on {day}", "is {name} shut on {day}"],
        system: &["no , it is not closed on {day}", "no , {name} is not shut"],
    },
    Intent {
        name: "maybe",
        action: "unsure_check",
        user: &["maybe the {area} , i am not sure", "i guess {area} but i do not know"],
        system: &["i am not sure either , did you say the {area}", "not sure i follow , the {area} then"],
    },
    Intent {
        name: "phone",
        action: "give_phone",
        user: &["what is the phone number of {name}", "can i have the number for {name}"],
        system: &["the phone number is {phone}", "you can call them on {phone}"],
    },
    Intent {
        name: "book_ok",
        action: "booked",
        user: &["book a table for {n} on sunday", "reserve for {n} people on sunday"],
        system: &["done , your table is booked , reference {ref}", "booked for {n} , your reference is {ref}"],
    },
    Intent {
        name: "book_fail",
        action: "booking_failed",
        user: &["book a table for {n} on christmas", "reserve for {n} people on christmas"],
        system: &["sorry , the booking failed , they are full", "i could not book that , no tables left"],
    },
    Intent {
        name: "goodbye",
        action: "farewell",
        user: &["thanks , goodbye", "that is all , bye", "great , thank you , bye"],
        system: &["thank you , goodbye", "thanks for calling , bye"],
    },
    Intent {
        name: "gibberish",
        action: "not_understood",
        user: &["{nonce} {nonce2} {nonce}", "{nonce2} {nonce}"],
        system: &["sorry , i did not understand that", "i do not understand , sorry"],
    },
    Intent {
        name: "mumble",
        action: "ask_repeat",
        user: &["um", "uh hmm", "er um"],
        system: &["could you repeat that please", "sorry , can you say that again"],
    },
    Intent {
        name: "recommend",
        action: "suggest",
        user: &["what do you recommend", "any suggestions", "what would you suggest"],
        system: &["how about {name} , it is very good", "i suggest {name} in the {area}"],
    },
    Intent {
        name: "directions",
        action: "give_directions",
        user: &["how do i get to {name}", "where is {name} exactly"],
        system: &["go {dir} from the station and turn left", "walk {dir} past the bridge"],
    },
    Intent {
        name: "area_only",
        action: "check_area",
        user: &["somewhere in the {area}", "the {area} part of town"],
        system: &["so you want the {area} , is that right", "the {area} , correct"],
    },
];

const NOISE_USER: &[&str] = &[
    "did you watch the {team} match yesterday",
    "my {pet} keeps chewing my shoes",
    "lovely weather for {season} is it not",
    "i just finished a great novel about {topic}",
    "do you like {music} music",
    "my cousin moved to {city} last {season}",
    "i cooked {food} food for my {pet} on {day}",
    "we went to the {area} of {city} to see the {team}",
    "my friend says {music} is better than {food} food",
    "i read that {topic} are real , is that true",
    "on {day} i walked my {pet} in the rain",
    "what is your favourite thing about {season}",
    "i never know what to say at parties",
    "tell me something funny about {topic}",
    "the {team} lost again , i am so tired of it",
    "have you ever been to {city} in {season}",
];
const NOISE_SYSTEM: &[&str] = &[
    "haha the {team} were brilliant",
    "oh a {pet} can be a handful",
    "i love {season} honestly",
    "{topic} sounds fascinating",
    "{music} is my favourite too",
    "{city} is supposed to be beautiful",
    "that sounds like a lovely {day}",
    "i have never been to {city} but i want to",
    "{music} makes me happy , and {food} food too",
    "nobody knows for sure with {topic}",
    "a {pet} in the rain sounds messy",
    "probably the long evenings",
    "just ask people about their {pet}",
    "{topic} are funnier than you think",
    "there is always next {season} for the {team}",
    "{city} is lovely in {season} i hear",
];

const FOODS: &[&str] = &["italian", "chinese", "indian", "thai", "french", "mexican", "korean", "spanish"];
const AREAS: &[&str] = &["north", "south", "east", "west", "centre"];
const PRICES: &[&str] = &["cheap", "moderate", "expensive"];
const NAMES: &[&str] = &["bombay", "golden", "wagamama", "zizzi", "nandos", "pipasha", "rice", "lotus", "eraina"];
const DAYS: &[&str] = &["monday", "tuesday", "wednesday", "thursday", "friday"];
const COUNTS: &[&str] = &["two", "three", "four", "five", "six"];
const PHONES: &[&str] = &["01223 412299", "01223 350688", "01223 566388", "01223 307581"];
const REFS: &[&str] = &["xk1", "zt9", "pq4", "lm7"];
const DIRS: &[&str] = &["north", "south", "straight", "left"];
const NONCE: &[&str] = &["blorf", "quix", "zang", "frimble", "wug", "snorp"];
const TEAMS: &[&str] = &["rovers", "united", "wanderers", "rangers", "city", "athletic"];
const PETS: &[&str] = &["puppy", "kitten", "parrot", "hamster", "goldfish", "tortoise"];
const SEASONS: &[&str] = &["spring", "autumn", "winter", "summer"];
const TOPICS: &[&str] = &["pirates", "volcanoes", "astronauts", "dinosaurs", "ghosts", "robots"];
const MUSIC: &[&str] = &["jazz", "punk", "opera", "folk", "techno", "reggae"];
const CITIES: &[&str] = &["lisbon", "oslo", "denver", "kyoto", "cairo", "lima"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_dialogs: usize,
    pub labeled_fraction: f64,
    /// Share of unlabeled dialogs drawn from the chit-chat grammar.
    pub noise_fraction: f64,
    pub min_exchanges: usize,
    pub max_exchanges: usize,
    pub id_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_dialogs: 1000,
            labeled_fraction: 0.1,
            noise_fraction: 0.0,
            min_exchanges: 1,
            max_exchanges: 2,
            id_prefix: "syn".into(),
        }
    }
}

/// Hidden gold annotation of one system turn, kept outside the records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditLabel {
    pub dialog_id: String,
    pub turn: usize,
    pub intent: String,
    pub das: DaLabelVector,
    pub noise: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub labeled: Vec<DialogRecord>,
    pub unlabeled: Vec<DialogRecord>,
    /// Gold labels for every system turn of the unlabeled split.
    pub audit: Vec<AuditLabel>,
}

fn fill(template: &str, rng: &mut ChaCha8Rng, slots: &mut Vec<(&'static str, &'static str)>) -> String {
    let tables: &[(&str, &[&str])] = &[
        ("{food}", FOODS),
        ("{area}", AREAS),
        ("{price}", PRICES),
        ("{name2}", NAMES),
        ("{name}", NAMES),
        ("{day}", DAYS),
        ("{n}", COUNTS),
        ("{phone}", PHONES),
        ("{ref}", REFS),
        ("{dir}", DIRS),
        ("{nonce2}", NONCE),
        ("{nonce}", NONCE),
        ("{team}", TEAMS),
        ("{pet}", PETS),
        ("{season}", SEASONS),
        ("{topic}", TOPICS),
        ("{music}", MUSIC),
        ("{city}", CITIES),
    ];
    let mut out = template.to_string();
    for (key, values) in tables {
        if !out.contains(key) {
            continue;
        }
        let value = match slots.iter().find(|(k, _)| k == key) {
            Some((_, v)) => *v,
            None => {
                let v = *values.choose(rng).expect("non-empty table");
                slots.push((key, v));
                v
            }
        };
        out = out.replace(key, value);
    }
    out
}

pub fn intent_names() -> Vec<&'static str> {
    INTENTS.iter().map(|i| i.name).collect()
}

/// Samples one intent index; exposed for the stationarity check.
pub fn sample_intent(rng: &mut impl Rng) -> usize {
    rng.random_range(0..INTENTS.len())
}

struct Exchange {
    user: String,
    system: String,
    intent: &'static str,
    das: DaLabelVector,
}

fn taxonomy_exchange(rng: &mut ChaCha8Rng, mapping: &SchemaMapping) -> Exchange {
    let intent = &INTENTS[sample_intent(rng)];
    let mut slots = Vec::new();
    let user = fill(intent.user.choose(rng).expect("templates"), rng, &mut slots);
    let system = fill(intent.system.choose(rng).expect("templates"), rng, &mut slots);
    let das = map_label(intent.action, mapping).expect("bundled actions are mapped");
    Exchange {
        user,
        system,
        intent: intent.name,
        das,
    }
}

fn noise_exchange(rng: &mut ChaCha8Rng) -> Exchange {
    let k = rng.random_range(0..NOISE_USER.len());
    let mut slots = Vec::new();
    let user = fill(NOISE_USER[k], rng, &mut slots);
    let system = fill(NOISE_SYSTEM[k], rng, &mut slots);
    Exchange {
        user,
        system,
        intent: "chitchat",
        das: DaLabelVector::empty(),
    }
}

pub fn generate_synthetic_corpus(seed: u64, config: &SynthConfig) -> Result<SyntheticCorpus> {
    if !(0.0..=1.0).contains(&config.labeled_fraction) {
        return Err(Error::Config(format!("labeled fraction {} outside [0, 1]", config.labeled_fraction)));
    }
    if !(0.0..=1.0).contains(&config.noise_fraction) {
        return Err(Error::Config(format!("noise fraction {} outside [0, 1]", config.noise_fraction)));
    }
    if config.min_exchanges == 0 || config.max_exchanges < config.min_exchanges {
        return Err(Error::Config("exchange bounds must satisfy 1 <= min <= max".into()));
    }
    let mapping = SchemaMapping::synthetic();
    let n_labeled = (config.num_dialogs as f64 * config.labeled_fraction).round() as usize;
    let n_unlabeled = config.num_dialogs - n_labeled;
    let n_noise = (n_unlabeled as f64 * config.noise_fraction).round() as usize;

    let mut corpus = SyntheticCorpus {
        labeled: Vec::with_capacity(n_labeled),
        unlabeled: Vec::with_capacity(n_unlabeled),
        audit: Vec::new(),
    };
    for i in 0..config.num_dialogs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_words(&[seed, 0x5e_7c0f, i as u64]));
        let labeled = i < n_labeled;
        let noise = !labeled && i - n_labeled < n_noise;
        let dialog_id = format!("{}-{i:06}", config.id_prefix);
        let exchanges = rng.random_range(config.min_exchanges..=config.max_exchanges);
        let mut turns = Vec::with_capacity(2 * exchanges);
        for _ in 0..exchanges {
            let ex = if noise {
                noise_exchange(&mut rng)
            } else {
                taxonomy_exchange(&mut rng, &mapping)
            };
            turns.push(Turn::new(Role::User, ex.user));
            if labeled {
                turns.push(Turn::labeled(Role::System, ex.system, ex.das));
            } else {
                corpus.audit.push(AuditLabel {
                    dialog_id: dialog_id.clone(),
                    turn: turns.len(),
                    intent: ex.intent.to_string(),
                    das: ex.das,
                    noise,
                });
                turns.push(Turn::new(Role::System, ex.system));
            }
        }
        let record = DialogRecord { dialog_id, turns };
        if labeled {
            corpus.labeled.push(record);
        } else {
            corpus.unlabeled.push(record);
        }
    }
    Ok(corpus)
}
