#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "puppetchat/action_library.hpp"
#include "puppetchat/error.hpp"
#include "puppetchat/micronarrative.hpp"
#include "puppetchat/recommendation.hpp"
#include "puppetchat/script.hpp"
#include "puppetchat/service.hpp"
#include "puppetchat/text_interpreter.hpp"

namespace py = pybind11;
using namespace puppetchat;
using nlohmann::json;

namespace {

// JSON crosses the boundary as text; the Python side sees plain dicts and lists.
py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_py(const py::handle& o) {
  if (o.is_none()) return nullptr;
  return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

ActionLibrary library_or_canonical(const std::optional<std::string>& document) {
  return document ? ActionLibrary::parse(*document) : canonical_library();
}

TextInterpreter offline_interpreter(const ActionLibrary& lib) {
  return TextInterpreter::offline(lib.embedding_dimension());
}

py::object lint(const std::string& document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::invalid_library, std::string("not valid JSON: ") + e.what());
  }
  json out = json::array();
  for (const auto& issue : ActionLibrary::lint(doc)) {
    out.push_back({{"action_id", issue.action_id}, {"message", issue.message}});
  }
  return to_py(out);
}

py::object analyze(const std::string& text, int dimension) {
  return to_py(analysis_to_json(OfflineProvider(dimension).analyze(text)));
}

std::vector<double> embed(const std::string& text, int dimension) { return OfflineProvider(dimension).embed(text); }

py::dict score_text_py(const std::string& text, const std::string& action_id,
                       const std::optional<std::string>& library) {
  const auto lib = library_or_canonical(library);
  const auto interp = offline_interpreter(lib);
  const auto parts = score_text_parts(interp.analyze(text), lib.at(action_id),
                                      [&](const Action& a) { return interp.embed(action_embedding_text(a)); });
  py::dict d;
  d["keyword"] = parts.keyword;
  d["valence"] = parts.valence;
  d["embedding"] = parts.embedding;
  d["total"] = parts.total();
  return d;
}

py::object recommend_py(const std::optional<std::string>& draft_text,
                        const std::optional<std::string>& partner_last_action, const std::string& state,
                        const std::string& user_id, std::uint64_t seed, const py::object& weights,
                        const std::optional<std::string>& library) {
  const auto lib = library_or_canonical(library);
  RecommendationContext ctx;
  ctx.draft_text = draft_text;
  ctx.partner_last_action = partner_last_action;
  const auto parsed = parse_conversation_state(state);
  if (!parsed) throw Error(ErrorCode::invalid_argument, "unknown conversation state '" + state + "'", state);
  ctx.conversation_state = *parsed;
  ctx.user_id = user_id;
  ctx.seed = seed;

  Weights w;
  if (!weights.is_none()) {
    const json j = from_py(weights);
    w.w_text = j.value("w_text", w.w_text);
    w.w_ctx = j.value("w_ctx", w.w_ctx);
    w.w_pref = j.value("w_pref", w.w_pref);
    w.noise_amplitude = j.value("noise_amplitude", w.noise_amplitude);
  }
  const auto result = recommend_detailed(ctx, lib, w, PreferenceStore{}, offline_interpreter(lib));
  json items = json::array();
  for (const auto& b : result.top) items.push_back(breakdown_to_json(b));
  return to_py(items);
}

py::object narrate_py(const std::string& action_id, const std::string& story, const std::vector<std::string>& tags) {
  const auto& lib = canonical_library();
  NarrativeEngine engine(std::make_shared<OfflineProvider>(lib.embedding_dimension()));
  PersonalStory s;
  s.text = story;
  s.version = story.empty() ? 0 : 1;
  return to_py(micronarrative_to_json(engine.generate(lib.at(action_id), s, {}, tags, &lib)));
}

py::object propose_tags_py(const std::string& story) {
  PersonalStory s;
  s.text = story;
  s.version = story.empty() ? 0 : 1;
  return to_py(tagset_to_json(NarrativeEngine::offline_tags(s)));
}

py::dict run_script_py(const std::string& text) {
  const auto script = parse_script(text);
  std::ostringstream log;
  ScriptReport report;
  {
    py::gil_scoped_release release;
    report = run_script(script, ServiceConfig{}, log);
  }
  py::dict d;
  d["passed"] = report.passed;
  d["steps_run"] = report.steps_run;
  d["failures"] = report.failures;
  d["log"] = log.str();
  return d;
}

class PyService {
 public:
  explicit PyService(const py::object& config) {
    json j = config.is_none() ? json::object() : from_py(config);
    service_ = std::make_unique<Service>(GatewayConfig::from_json(j).service);
  }

  std::string login(const std::string& user_id, const std::string& display_name) {
    return service_->login(user_id, display_name).first;
  }

  py::tuple http(const std::string& method, const std::string& target, const py::object& body,
                 const std::string& token) {
    HttpRequest req;
    req.method = method;
    req.bearer = token;
    const auto q = target.find('?');
    req.path = target.substr(0, q);
    if (q != std::string::npos) {
      std::istringstream in(target.substr(q + 1));
      for (std::string pair; std::getline(in, pair, '&');) {
        const auto eq = pair.find('=');
        if (eq == std::string::npos) req.query[pair] = "";
        else req.query[pair.substr(0, eq)] = pair.substr(eq + 1);
      }
    }
    if (!body.is_none()) req.body = from_py(body).dump();
    HttpResponse res;
    {
      py::gil_scoped_release release;
      res = service_->handle_http(req);
    }
    return py::make_tuple(res.status, to_py(res.body));
  }

 private:
  std::unique_ptr<Service> service_;
};

}  // namespace

PYBIND11_MODULE(_puppetchat, m) {
  m.doc() = "Puppet action library, recommendation and micronarratives";

  PYBIND11_CONSTINIT static py::gil_safe_call_once_and_store<py::object> error_type;
  error_type.call_once_and_store_result([&]() { return py::object(py::exception<Error>(m, "PuppetchatError")); });
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      const py::object& cls = error_type.get_stored();
      py::object inst = cls(e.what());
      inst.attr("code") = std::string(to_string(e.code()));
      inst.attr("subject") = e.subject();
      PyErr_SetObject(cls.ptr(), inst.ptr());
    }
  });

  m.def("canonical_library", [] { return std::string(canonical_library_document()); },
        "The shipped library document as JSON text.");
  m.def("lint", &lint, py::arg("document"), "Every defect found in a library document; empty when clean.");
  m.def("analyze", &analyze, py::arg("text"), py::arg("dimension") = 256);
  m.def("embed", &embed, py::arg("text"), py::arg("dimension") = 256);
  m.def("score_text", &score_text_py, py::arg("text"), py::arg("action_id"), py::arg("library") = py::none());
  m.def("recommend", &recommend_py, py::kw_only(), py::arg("draft_text") = py::none(),
        py::arg("partner_last_action") = py::none(), py::arg("state") = "opening", py::arg("user_id") = "user",
        py::arg("seed") = 0, py::arg("weights") = py::none(), py::arg("library") = py::none());
  m.def("narrate", &narrate_py, py::arg("action_id"), py::arg("story") = "",
        py::arg("tags") = std::vector<std::string>{});
  m.def("propose_tags", &propose_tags_py, py::arg("story"));
  m.def("run_script", &run_script_py, py::arg("text"));

  py::class_<PyService>(m, "Service")
      .def(py::init<const py::object&>(), py::arg("config") = py::none())
      .def("login", &PyService::login, py::arg("user_id"), py::arg("display_name") = "")
      .def("http", &PyService::http, py::arg("method"), py::arg("target"), py::arg("body") = py::none(),
           py::arg("token") = "");
}
