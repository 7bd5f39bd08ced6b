#include "clinsum/synthetic.hpp"

#include <array>

namespace clinsum {

namespace {

const std::array<const char*, 10> kDepartments = {
    "cardiology", "dermatology", "neurology", "gastroenterology", "pulmonology",
    "orthopedics", "psychiatry", "urology",   "oncology",         "pediatrics"};

const std::array<std::array<const char*, 2>, 10> kSymptoms = {{
    {"palpitations", "breathlessness"},
    {"rash", "itching"},
    {"headache", "dizziness"},
    {"nausea", "cramps"},
    {"cough", "wheezing"},
    {"stiffness", "swelling"},
    {"insomnia", "anxiety"},
    {"burning", "urgency"},
    {"fatigue", "weakness"},
    {"fever", "colic"},
}};

std::string department_name(int idx) {
  if (idx < static_cast<int>(kDepartments.size())) return kDepartments[static_cast<size_t>(idx)];
  return "department" + std::to_string(idx + 1);
}

std::array<std::string, 2> department_symptoms(int idx) {
  if (idx < static_cast<int>(kSymptoms.size())) {
    return {kSymptoms[static_cast<size_t>(idx)][0], kSymptoms[static_cast<size_t>(idx)][1]};
  }
  std::string n = std::to_string(idx + 1);
  return {"symptom" + n + "a", "symptom" + n + "b"};
}

}  // namespace

SyntheticBundle generate_synthetic(const SyntheticOptions& opts) {
  if (opts.n_dialogues < opts.n_departments) {
    throw ConfigError("generate_synthetic: need at least one dialogue per department");
  }
  if (opts.n_departments < 1) throw ConfigError("generate_synthetic: n_departments must be >= 1");
  if (opts.d_v < 1) throw ConfigError("generate_synthetic: d_v must be >= 1");

  // small hints trim the filler turn so the token inventory stays bounded
  bool with_filler_turn = opts.vocab_size_hint >= 72;
  const std::array<const char*, 4> severities = {"mild", "severe", "acute", "chronic"};
  const std::array<const char*, 2> durations = {"two", "three"};

  SyntheticBundle bundle;
  Rng base(opts.seed);

  std::vector<KnowledgeTriple> triples;
  for (int dep = 0; dep < opts.n_departments; ++dep) {
    std::string dept = department_name(dep);
    for (const std::string& s : department_symptoms(dep)) {
      triples.push_back({s, "related_to", dept, 0.95});
      triples.push_back({s, "is_a", "symptom", 0.9});
      triples.push_back({s, "seen_in", "patients", 0.85});
      triples.push_back({s, "treated_in", dept, 0.8});
      triples.push_back({s, "suggests", "illness", 0.75});
      triples.push_back({s, "has_context", "medicine", 0.7});
    }
  }
  bundle.store = TripleStore(std::move(triples));

  VisualFeatureStore visuals(opts.d_v);
  for (int i = 0; i < opts.n_dialogues; ++i) {
    int dep = i % opts.n_departments;
    std::string dept = department_name(dep);
    auto symptoms = department_symptoms(dep);
    Rng rng = base.named("synth/dialogue/" + std::to_string(i));

    int picked = rng.uniform_int(0, 2);  // 0: first, 1: second, 2: both
    std::string first = picked == 1 ? symptoms[1] : symptoms[0];
    std::string phrase = picked == 2 ? symptoms[0] + " and " + symptoms[1] : first;

    Dialogue d;
    d.id = "dlg" + std::to_string(i);
    d.department = dept;
    if (i % 3 != 0) d.disease = first + " disorder";

    d.utterances.push_back({Speaker::patient, "hello doctor i am having " + phrase, {}});
    d.utterances.push_back({Speaker::doctor, "how long have you been having " + first + " ?", {}});
    if (with_filler_turn) {
      std::string duration = durations[static_cast<size_t>(rng.uniform_int(0, 1))];
      std::string severity = severities[static_cast<size_t>(rng.uniform_int(0, 3))];
      d.utterances.push_back({Speaker::patient, "it has been " + duration + " days and it feels " + severity, {}});
    }
    d.utterances.push_back({Speaker::doctor, "please share a photo of the affected area", {}});
    std::string image_id = "img_" + d.id;
    d.utterances.push_back({Speaker::patient, "", {image_id}});
    d.utterances.push_back({Speaker::doctor, "thank you this seems to be a " + dept + " case", {}});

    d.summary = "patient reports " + phrase + " and is advised to visit the " + dept + " department";
    d.mcs = dept + " consultation for " + first;
    d.doctor_impression = "likely " + dept + " case monitor " + first + " and review soon";
    bundle.corpus.push_back(std::move(d));

    // department-centred features with per-image jitter
    Rng dep_rng = base.named("synth/visual/dept/" + std::to_string(dep));
    Rng img_rng = base.named("synth/visual/img/" + image_id);
    std::vector<double> feature(static_cast<size_t>(opts.d_v));
    for (double& v : feature) v = dep_rng.uniform(-1.0, 1.0) + 0.1 * img_rng.uniform(-1.0, 1.0);
    visuals.add(image_id, std::move(feature));
  }
  bundle.visuals = std::move(visuals);
  return bundle;
}

}  // namespace clinsum
