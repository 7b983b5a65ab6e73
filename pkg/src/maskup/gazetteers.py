"""Word lists and sentence templates for the synthetic corpora."""

from __future__ import annotations

from dataclasses import dataclass

FIRST_NAMES = (
    "Aaliyah Abdul Adaeze Aiko Alejandro Alexandra Amara Anders Anjali Arjun Astrid Beatriz "
    "Benedikt Bronwyn Camila Chidi Chiara Cormac Dagny Dmitri Ebele Elif Emeka Esperanza Farida "
    "Fernando Giulia Gunnar Hana Hiroshi Ingrid Isabela Jamal Jorge Kalani Kasimir Keiko Lakshmi "
    "Leandro Liesel Magdalena Malik Mateus Mireille Nadia Nikolai Oluwaseun Priya Rafael Rosalind "
    "Saoirse Sebastian Siobhan Tariq Thandiwe Valentina Wilhelmina Xiomara Yusuf Zofia"
).split()

LAST_NAMES = (
    "Abernathy Adeyemi Albrecht Alvarez Bergstrom Castellanos Chakraborty Delacroix Dubois "
    "Eriksson Fitzgerald Gallagher Gonzalez Hakimi Haraldsen Iwasaki Jankowski Kowalczyk Kuznetsov "
    "Lindqvist Mackenzie Magnusson Markovic Montgomery Nakamura Novakova Okonkwo Oyelaran "
    "Pemberton Quintero Rasmussen Richardson Rodriguez Sandoval Schneider Sorensen Tanaka "
    "Thompson Umarov Valdivia Vasquez Wellington Whitaker Yamamoto Zielinski"
).split()

ORGANIZATIONS = (
    "Northwind Trading Company", "Meridian Health Services", "Blue Harbor Logistics",
    "Silverline Insurance Group", "Crescent Valley University", "Granite Peak Construction",
    "Evergreen Community Bank", "Atlas Security Solutions", "Riverside Medical Center",
    "Pinnacle Software Labs", "Sunrise Hospitality Group", "Ironclad Manufacturing",
    "Harborview Police Department", "Westbrook High School", "Cedar Ridge Pharmaceuticals",
    "Lighthouse Media Network", "Summit Legal Partners", "Oakwood Retail Holdings",
    "Redstone Energy Corporation", "Maplewood City Council", "Falcon Aviation Services",
    "Golden Gate Textiles", "Starlight Entertainment", "Horizon Telecom",
)

LOCATIONS = (
    "San Francisco", "Buenos Aires", "Kuala Lumpur", "Rio de Janeiro", "New Delhi",
    "Cape Town", "Stockholm", "Manchester", "Johannesburg", "Vancouver", "Marseille",
    "Saint Petersburg", "Ho Chi Minh City", "Addis Ababa", "Copenhagen", "Guadalajara",
    "Edinburgh", "Nairobi", "Montevideo", "Lake Geneva", "Brooklyn Heights", "Port Elizabeth",
    "Salt Lake City", "Kathmandu",
)

MISC = (
    "Olympic Games", "World Cup", "Diwali", "Oktoberfest", "Lunar New Year", "Ramadan",
    "Champions League", "Grammy Awards", "Brazilian", "Norwegian", "Japanese", "Nigerian",
    "Portuguese", "Eurovision Song Contest", "Thanksgiving", "Carnival", "Super Bowl",
    "Hanukkah", "Vietnamese", "Scottish",
)


@dataclass(frozen=True)
class Gazetteers:
    persons: tuple[str, ...]
    organizations: tuple[str, ...]
    locations: tuple[str, ...]
    misc: tuple[str, ...]

    def for_label(self, label: str) -> tuple[str, ...]:
        return {"PER": self.persons, "ORG": self.organizations,
                "LOC": self.locations, "MISC": self.misc}[label]


def person_names(first: list[str], last: list[str]) -> tuple[str, ...]:
    names = []
    for i, f in enumerate(first):
        for j, l in enumerate(last):
            if (i + j) % 3 == 0:
                names.append(f"{f} {l}")
            elif (i + j) % 3 == 1:
                names.append(f)
    return tuple(names)


DEFAULT = Gazetteers(person_names(FIRST_NAMES, LAST_NAMES), ORGANIZATIONS, LOCATIONS, MISC)

# two person gazetteers with no shared words, for the continual-learning shift
_half_f = len(FIRST_NAMES) // 2
_half_l = len(LAST_NAMES) // 2
TASK_A = Gazetteers(person_names(FIRST_NAMES[:_half_f], LAST_NAMES[:_half_l]), ORGANIZATIONS, LOCATIONS, MISC)
TASK_B = Gazetteers(person_names(FIRST_NAMES[_half_f:], LAST_NAMES[_half_l:]), ORGANIZATIONS, LOCATIONS, MISC)

TEMPLATES = (
    "{PER} said the incident happened near {LOC} last week .",
    "i reported {PER} to the police on monday .",
    "{PER} works for {ORG} in {LOC} .",
    "the manager at {ORG} , {PER} , ignored my complaint .",
    "we watched the {MISC} parade with {PER} .",
    "{PER} followed me from {LOC} to the station .",
    "a spokesperson for {ORG} declined to comment .",
    "my friend {PER} speaks {MISC} fluently .",
    "it happened during {MISC} in {LOC} .",
    "{ORG} fired {PER} after the complaint .",
    "please help , {PER} keeps calling me .",
    "i met {PER} and {PER} at a party in {LOC} .",
    "the office of {ORG} is located in {LOC} .",
    "nobody at {ORG} believed me when i told them about {PER} .",
    "{PER} was my supervisor during the {MISC} season .",
    "last year in {LOC} , {PER} threatened my sister .",
    "he claims to be a {MISC} student at {ORG} .",
    "they moved to {LOC} after the trial .",
    "yesterday {PER} sent me messages again .",
    "contact {ORG} if you saw anything in {LOC} .",
)

# the shifted task: a different register, persons and organizations only
SHIFT_TEMPLATES = (
    "according to {ORG} , {PER} resigned on friday .",
    "{PER} , a former employee of {ORG} , was questioned .",
    "the board of {ORG} appointed {PER} as director .",
    "investigators interviewed {PER} about the leak .",
    "{PER} denied every allegation made by {ORG} .",
    "shareholders of {ORG} criticised {PER} openly .",
    "{PER} and {PER} sued {ORG} last month .",
    "an email from {PER} was forwarded to {ORG} .",
)

FILLER = (
    "i do not feel safe going outside anymore .",
    "the situation has been getting worse every day .",
    "please share this so that others can stay careful .",
    "nobody listened when i tried to speak up .",
    "it took me a long time to write this post .",
    "thank you all for the support and kind words .",
    "i am still waiting for a response from the authorities .",
    "this kind of behaviour should never be tolerated .",
    "we need better systems to protect people who report abuse .",
    "the messages started late at night and did not stop .",
)
