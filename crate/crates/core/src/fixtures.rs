//! Reference data: the running example sentence and published training-set
//! type frequency tables with their long-tail halves.

use crate::corpus::{AnnotatedSentence, Ontology};

/// Chemistry sentence with four annotated mentions.
pub fn running_example() -> AnnotatedSentence {
    AnnotatedSentence::from_spans(
        "running-example",
        "Through application of ligand screening, we describe the first examples of \
         Pd-catalyzed Suzuki–Miyaura reactions using aryl sulfamates at room temperature .",
        &[
            (3, 4, "Ligands"),
            (11, 14, "Coupling reactions"),
            (15, 17, "Aromatic compounds"),
            (18, 20, "Thermodynamic properties"),
        ],
    )
    .expect("fixture is valid")
}

/// Expected linearization of [`running_example`].
pub const RUNNING_EXAMPLE_LINEARIZED: &str = "ligand <Ligands>, Pd-catalyzed Suzuki–Miyaura reactions \
<Coupling reactions>, aryl sulfamates <Aromatic compounds>, room temperature <Thermodynamic properties>";

/// ChemNER+ training frequencies (52 types).
pub const CHEMNER_PLUS_FREQUENCIES: &[(&str, usize)] = &[
    ("Organic compounds", 183),
    ("Coupling reactions", 171),
    ("Aromatic compounds", 136),
    ("Functional groups", 120),
    ("Heterocyclic compounds", 106),
    ("Catalysts", 70),
    ("Biomolecules", 66),
    ("Chemical elements", 64),
    ("Organohalides", 63),
    ("Transition metals", 56),
    ("Chemical properties", 55),
    ("Ligands", 55),
    ("Organic acids", 48),
    ("Thermodynamic properties", 43),
    ("Inorganic compounds", 43),
    ("Coordination compounds", 37),
    ("Stereochemistry", 33),
    ("Organometallic compounds", 33),
    ("Reagents for organic chemistry", 28),
    ("Coordination chemistry", 27),
    ("Organonitrogen compounds", 26),
    ("Organic reactions", 23),
    ("Organic polymers", 23),
    ("Substitution reactions", 21),
    ("Catalysis", 20),
    ("Organic redox reactions", 18),
    ("Reactive intermediates", 13),
    ("Substituents", 13),
    ("Halogens", 12),
    ("Addition reactions", 8),
    ("Chlorides", 6),
    ("Ring forming reactions", 6),
    ("Inorganic carbon compounds", 6),
    ("Enzymes", 6),
    ("Alkaloids", 4),
    ("Organophosphorus compounds", 4),
    ("Organosulfur compounds", 4),
    ("Oxoacids", 4),
    ("Elimination reactions", 3),
    ("Carbenes", 3),
    ("Inorganic phosphorus compounds", 2),
    ("Chemical kinetics", 2),
    ("Macrocycles", 2),
    ("Noble gases", 2),
    ("Organometallic chemistry", 2),
    ("Hydrogenation catalysts", 2),
    ("Metal halides", 1),
    ("Cyclopentadienyl complexes", 1),
    ("Inorganic nitrogen compounds", 1),
    ("Protecting groups", 1),
    ("Alkylating agents", 1),
    ("Polymerization reactions", 1),
];

/// The 26 published ChemNER+ long-tail types.
pub const CHEMNER_PLUS_LONG_TAIL: &[&str] = &[
    "Reactive intermediates",
    "Substituents",
    "Halogens",
    "Addition reactions",
    "Chlorides",
    "Ring forming reactions",
    "Inorganic carbon compounds",
    "Enzymes",
    "Alkaloids",
    "Organophosphorus compounds",
    "Organosulfur compounds",
    "Oxoacids",
    "Elimination reactions",
    "Carbenes",
    "Inorganic phosphorus compounds",
    "Chemical kinetics",
    "Macrocycles",
    "Noble gases",
    "Organometallic chemistry",
    "Hydrogenation catalysts",
    "Metal halides",
    "Cyclopentadienyl complexes",
    "Inorganic nitrogen compounds",
    "Protecting groups",
    "Alkylating agents",
    "Polymerization reactions",
];

/// CHEMET training frequencies (28 types).
pub const CHEMET_FREQUENCIES: &[(&str, usize)] = &[
    ("Other Organic Compounds", 1705),
    ("Ethers", 934),
    ("Other Aromatic Compounds", 882),
    ("Heterocyclic Compounds", 792),
    ("Alkanes", 528),
    ("Amides", 516),
    ("Other Organonitrogen Compounds", 501),
    ("Organometallic Compounds", 495),
    ("Esters", 440),
    ("Amines", 431),
    ("Ketones", 406),
    ("Polycyclic Organic Compounds", 375),
    ("Aryl Groups", 363),
    ("Organohalides", 312),
    ("Alkynes", 281),
    ("Alkenes", 266),
    ("Organic Polymers", 255),
    ("Other Hydrocarbons", 236),
    ("Other Organic Acids", 194),
    ("Other Organophosphorus Compounds", 97),
    ("Acyl Groups", 78),
    ("Nitriles", 77),
    ("Carboxylic Acids", 62),
    ("Sulfonic Acids", 37),
    ("Nitro Compounds", 26),
    ("Carbenes", 9),
    ("Phosphonic Acids And Derivatives", 4),
    ("Thiols", 2),
];

/// The 14 published CHEMET long-tail types.
pub const CHEMET_LONG_TAIL: &[&str] = &[
    "Alkynes",
    "Alkenes",
    "Organic Polymers",
    "Other Hydrocarbons",
    "Other Organic Acids",
    "Other Organophosphorus Compounds",
    "Acyl Groups",
    "Nitriles",
    "Carboxylic Acids",
    "Sulfonic Acids",
    "Nitro Compounds",
    "Carbenes",
    "Phosphonic Acids And Derivatives",
    "Thiols",
];

pub fn chemner_plus_ontology() -> Ontology {
    Ontology::from_counts(CHEMNER_PLUS_FREQUENCIES.iter().copied())
}

pub fn chemet_ontology() -> Ontology {
    Ontology::from_counts(CHEMET_FREQUENCIES.iter().copied())
}
