#include "normprior/surrogate.hpp"

#include <cstdio>
#include <set>
#include <string>

#include "normprior/error.hpp"
#include "normprior/rng.hpp"

namespace normprior::corpus {

namespace {

// Slots: {obj} {other} {poss} {pron}. {other} may itself contain {poss}.
struct Situation {
  std::vector<std::string> positive;
  std::vector<std::string> negative;
  std::vector<std::string> objects;
  std::vector<std::string> others;
};

struct Subject {
  std::string noun;
  std::string poss;
  std::string pron;
};

struct Grammar {
  std::string id_prefix;
  std::vector<Subject> subjects;
  std::vector<std::string> contexts;
  std::vector<Situation> situations;
};

const Grammar& everyday() {
  static const Grammar g{
      "sg",
      {{"He", "his", "he"}, {"She", "her", "she"}},
      {"", "", "at recess", "after school", "during lunch", "at the park",
       "in class", "at home", "at the library", "on the playground",
       "at the birthday party", "before dinner"},
      {
          {{"shares {poss} {obj} with {other}",
            "offers to share {poss} {obj} with {other}",
            "lets {other} play with {poss} {obj}"},
           {"refuses to share {poss} {obj} with {other}",
            "hides {poss} {obj} from {other}",
            "keeps all of {poss} {obj} away from {other}"},
           {"toys", "crayons", "snacks", "books", "markers", "building blocks"},
           {"the new student", "{poss} little brother", "{poss} friends",
            "the other kids", "a classmate"}},
          {{"helps {other} carry the {obj}",
            "offers to help {other} with the {obj}",
            "stops to help {other} pick up the {obj}"},
           {"refuses to help {other} carry the {obj}",
            "ignores {other} who is struggling with the {obj}",
            "laughs while {other} struggles with the {obj}"},
           {"groceries", "heavy boxes", "library books", "folding chairs"},
           {"{poss} neighbor", "the teacher", "an older woman", "{poss} mother",
            "a classmate"}},
          {{"waits for {poss} turn to use the {obj}",
            "waits patiently in line for the {obj}",
            "lets {other} go first on the {obj}"},
           {"does not wait for {poss} turn to use the {obj}",
            "pushes ahead of {other} to get to the {obj}",
            "cuts in line for the {obj}"},
           {"slide", "swings", "water fountain", "computer", "drinking fountain"},
           {"the younger kids", "{poss} sister", "a classmate", "the new student"}},
          {{"listens quietly while {other} is talking",
            "raises {poss} hand and waits for {other} to finish",
            "waits until {other} finishes speaking"},
           {"interrupts {other} while they are talking",
            "talks loudly while {other} is talking",
            "does not wait until {other} finishes speaking"},
           {},
           {"the teacher", "{poss} father", "{poss} grandmother", "the coach",
            "a classmate"}},
          {{"cleans up {poss} {obj} after playing",
            "puts {poss} {obj} away without being asked",
            "helps {other} put the {obj} away"},
           {"leaves {poss} {obj} all over the floor",
            "does not clean up {poss} {obj} after playing",
            "expects {other} to put the {obj} away"},
           {"toys", "paint brushes", "art supplies", "puzzle pieces", "dishes"},
           {"{poss} mother", "{poss} father", "the teacher"}},
          {{"throws the {obj} in the trash can",
            "picks up the {obj} and puts it in the recycling bin",
            "carries the {obj} home to throw it away"},
           {"throws the {obj} on the ground",
            "drops the {obj} on the sidewalk",
            "leaves the {obj} on the bench for {other} to clean up"},
           {"candy wrapper", "empty juice box", "banana peel", "paper cup"},
           {"someone else", "the janitor", "{poss} friends"}},
          {{"thanks {other} for the {obj}",
            "writes a thank you note to {other} for the {obj}",
            "smiles and thanks {other} for the {obj}"},
           {"forgets to thank {other} for the {obj}",
            "complains to {other} about the {obj}",
            "makes fun of the {obj} from {other}"},
           {"gift", "sweater", "birthday card", "cookies", "drawing"},
           {"{poss} aunt", "{poss} grandmother", "a friend", "{poss} uncle"}},
          {{"tells the truth about the broken {obj}",
            "admits that {pron} broke the {obj}",
            "tells {other} that {pron} broke the {obj}"},
           {"lies about the broken {obj}",
            "blames {other} for the broken {obj}",
            "hides the broken {obj} from {other}"},
           {"vase", "window", "lamp", "flower pot", "picture frame"},
           {"{poss} mother", "{poss} brother", "the teacher", "{poss} father"}},
          {{"invites {other} to join the game of {obj}",
            "asks {other} to play {obj} with them",
            "makes room for {other} in the game of {obj}"},
           {"leaves {other} out of the game of {obj}",
            "tells {other} that they cannot play {obj}",
            "laughs when {other} asks to play {obj}"},
           {"tag", "soccer", "kickball", "checkers", "basketball"},
           {"the new student", "a shy classmate", "{poss} little brother",
            "the girl next door"}},
          {{"asks {other} before borrowing the {obj}",
            "returns the borrowed {obj} to {other} on time",
            "asks permission from {other} to use the {obj}"},
           {"takes the {obj} from {other} without asking",
            "borrows the {obj} from {other} and never returns it",
            "uses the {obj} without asking {other}"},
           {"bicycle", "scissors", "video game", "pencil", "jump rope"},
           {"{poss} brother", "a classmate", "{poss} neighbor", "{poss} sister"}},
          {{"says please when asking {other} for the {obj}",
            "waits until everyone is served before eating the {obj}",
            "politely asks {other} to pass the {obj}"},
           {"grabs the {obj} without saying please",
            "starts eating the {obj} before everyone is served",
            "reaches across {other} to grab the {obj}"},
           {"bread", "potatoes", "salad", "dessert", "rolls"},
           {"{poss} father", "{poss} grandmother", "the guest", "{poss} sister"}},
          {{"gently pets the {obj}",
            "remembers to feed the {obj} on time",
            "gives the {obj} fresh water"},
           {"pulls the tail of the {obj}",
            "forgets to feed the {obj}",
            "chases the {obj} around the yard"},
           {"dog", "cat", "puppy", "kitten", "hamster"},
           {}},
          {{"apologizes after bumping into {other}",
            "says sorry to {other} after knocking over the {obj}",
            "helps {other} pick up the {obj} after bumping into them"},
           {"keeps walking after bumping into {other}",
            "laughs at {other} after knocking over the {obj}",
            "blames {other} after knocking over the {obj}"},
           {"books", "lunch tray", "tower of blocks", "backpack"},
           {"a classmate", "an older man", "{poss} friend", "the new student"}},
      }};
  return g;
}

const Grammar& adventure() {
  static const Grammar g{
      "adv",
      {{"The captain", "her", "she"}, {"The pilot", "his", "he"},
       {"The young knight", "his", "he"}, {"The engineer", "her", "she"},
       {"The smuggler", "his", "he"}, {"The commander", "her", "she"}},
      {"", "", "aboard the starship", "on the frozen moon",
       "in the desert city", "during the rebellion", "near the old temple",
       "at the space station"},
      {
          {{"rescues the stranded {other} before the {obj}",
            "goes back for the wounded {other} despite the {obj}"},
           {"abandons the stranded {other} to the {obj}",
            "leaves the wounded {other} behind during the {obj}"},
           {"reactor meltdown", "ice storm", "enemy attack", "asteroid strike"},
           {"crew", "villagers", "miners", "colonists", "refugees"}},
          {{"shares the last of the {obj} with the {other}",
            "offers to share {poss} {obj} with the {other}"},
           {"hoards the last of the {obj} while the {other} go hungry",
            "refuses to share {poss} {obj} with the {other}"},
           {"water", "rations", "medicine", "fuel"},
           {"crew", "villagers", "prisoners", "colonists"}},
          {{"tells the council the truth about the {obj}",
            "admits to the {other} that {pron} lost the {obj}"},
           {"lies to the council about the {obj}",
            "blames the {other} for the lost {obj}"},
           {"ancient artifact", "star map", "missing cargo", "damaged shield"},
           {"crew", "elders", "guards"}},
          {{"helps the {other} repair the {obj}",
            "stays to help the {other} fix the {obj}"},
           {"ignores the {other} struggling to repair the {obj}",
            "refuses to help the {other} fix the {obj}"},
           {"engine", "water pump", "shield generator", "broken bridge"},
           {"crew", "villagers", "mechanics", "settlers"}},
          {{"protects the {other} from the {obj}",
            "stands guard over the {other} against the {obj}"},
           {"betrays the {other} to the {obj}",
            "sells out the {other} to the {obj}"},
           {"raiders", "empire", "pirates", "bounty hunters"},
           {"refugees", "rebels", "villagers", "crew"}},
          {{"frees the captured {other}", "unlocks the cells of the captured {other}"},
           {"sells the captured {other} to the {obj}",
            "keeps the captured {other} locked up for the {obj}"},
           {"slavers", "pirates", "warlord"},
           {"prisoners", "villagers", "droids", "miners"}},
          {{"thanks the {other} for their courage",
            "thanks the {other} for their help with the {obj}"},
           {"mocks the {other} for their fear",
            "makes fun of the {other} for their help with the {obj}"},
           {"escape", "battle", "repairs"},
           {"crew", "soldiers", "pilots", "cadets"}},
          {{"keeps {poss} promise to the {other}",
            "pays the {other} the {obj} as promised"},
           {"breaks {poss} promise to the {other}",
            "cheats the {other} out of the {obj}"},
           {"reward", "wages", "fee"},
           {"traders", "crew", "guides", "mercenaries"}},
          {{"spares the surrendering {other}",
            "gives the surrendering {other} {obj}"},
           {"attacks the surrendering {other}",
            "takes the {obj} from the surrendering {other}"},
           {"food", "medicine", "water"},
           {"soldiers", "pirates", "guards", "raiders"}},
          {{"returns the stolen {obj} to the {other}",
            "gives the found {obj} back to the {other}"},
           {"steals the {obj} from the {other}",
            "keeps the found {obj} instead of returning it to the {other}"},
           {"crystal", "star map", "supplies", "gold"},
           {"temple", "villagers", "merchants", "monks"}},
      }};
  return g;
}

const Grammar& grammar_for(SurrogateDomain d) {
  return d == SurrogateDomain::kAdventure ? adventure() : everyday();
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos;
       pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

std::string render(std::string vp, const Subject& subj, const std::string& obj,
                   const std::string& other, const std::string& context) {
  replace_all(vp, "{other}", other);
  replace_all(vp, "{obj}", obj);
  replace_all(vp, "{poss}", subj.poss);
  replace_all(vp, "{pron}", subj.pron);
  std::string s = subj.noun + " " + vp;
  if (!context.empty()) s += " " + context;
  return s + ".";
}

}  // namespace

std::uint64_t surrogate_capacity(SurrogateDomain domain) {
  const Grammar& g = grammar_for(domain);
  std::uint64_t per_subject_context = 0;
  for (const auto& s : g.situations) {
    per_subject_context += s.positive.size() * s.negative.size() *
                           std::max<std::size_t>(1, s.objects.size()) *
                           std::max<std::size_t>(1, s.others.size());
  }
  std::set<std::string> contexts(g.contexts.begin(), g.contexts.end());
  return per_subject_context * g.subjects.size() * contexts.size();
}

std::vector<PanelPair> generate_surrogate(int n_pairs, std::uint64_t seed,
                                          SurrogateDomain domain) {
  if (n_pairs < 1) throw ValidationError("generate_surrogate: n_pairs must be >= 1");
  const Grammar& g = grammar_for(domain);
  constexpr int kAttempts = 64;

  Rng rng(seed);
  std::set<std::pair<std::string, std::string>> seen;
  std::vector<PanelPair> out;
  out.reserve(static_cast<std::size_t>(n_pairs));
  static const std::string kNone;

  for (int i = 0; i < n_pairs; ++i) {
    PanelPair pair;
    for (int attempt = 0; attempt < kAttempts; ++attempt) {
      const Situation& s = rng.pick(g.situations);
      const Subject& subj = rng.pick(g.subjects);
      const std::string& context = rng.pick(g.contexts);
      const std::string& obj = s.objects.empty() ? kNone : rng.pick(s.objects);
      const std::string& other = s.others.empty() ? kNone : rng.pick(s.others);
      const std::string& pos = rng.pick(s.positive);
      const std::string& neg = rng.pick(s.negative);
      pair.positive_text = render(pos, subj, obj, other, context);
      pair.negative_text = render(neg, subj, obj, other, context);
      if (seen.emplace(pair.positive_text, pair.negative_text).second) break;
    }
    char id[48];
    std::snprintf(id, sizeof id, "%s-%llu-%05d", g.id_prefix.c_str(),
                  static_cast<unsigned long long>(seed), i);
    pair.id = id;
    out.push_back(std::move(pair));
  }
  return out;
}

}  // namespace normprior::corpus
