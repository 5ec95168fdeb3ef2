use std::io::{Read, Write};
use std::net::TcpListener;

use super::llm::extract_code_block;
use super::*;
use crate::distributions::MarginalDistribution;
use crate::dsl::{parse, HeuristicSignature, SignatureKind};
use crate::mechanisms::{ReverseFixMode, SettingSpec};

fn redistribution_setting() -> SettingSpec {
    SettingSpec::VcgRedistribution {
        n_bidders: 4,
        n_items: 2,
        distribution: MarginalDistribution::uniform01(),
        fix_grid_resolution: 101,
        reverse_fix: ReverseFixMode::Off,
    }
}

fn rediscovery_setting() -> SettingSpec {
    SettingSpec::RediscoveryPerBidder {
        n_bidders: 2,
        distributions: vec![MarginalDistribution::uniform01()],
        epsilon: 0.001,
    }
}

fn request(parents: &[(&str, f64)], strategy: Option<u8>, seed: u64) -> ProposalRequest {
    ProposalRequest {
        parents: parents.iter().map(|(s, v)| (s.to_string(), *v)).collect(),
        strategy_id: strategy,
        version: 3,
        rng_seed: seed,
    }
}

// --- symbolic proposer --------------------------------------------------

#[test]
fn symbolic_output_always_parses() {
    for setting in [rediscovery_setting(), redistribution_setting()] {
        let signature = setting.signature();
        let mut proposer = SymbolicProposer::for_setting(&setting);
        let parents: &[(&str, f64)] = match signature.kind {
            SignatureKind::PerBidderScore => {
                &[("def heuristic(v): return v", 0.33), ("def heuristic(v): return cdf(v)", 0.3)]
            }
            _ => &[
                ("def heuristic(others_bids): return 0.5 * min(others_bids)", 0.5),
                ("def heuristic(others_bids): return mean(others_bids) - 0.2", 0.3),
            ],
        };
        for seed in 0..400u64 {
            for strategy in 1..=5u8 {
                let source = proposer
                    .propose(&request(parents, Some(strategy), seed))
                    .expect("symbolic proposals never fail");
                parse(&source, signature).unwrap_or_else(|e| {
                    panic!("strategy {strategy} seed {seed} produced unparseable output: {e}\n{source}")
                });
            }
        }
    }
}

#[test]
fn symbolic_is_deterministic_per_seed() {
    let setting = redistribution_setting();
    let mut proposer = SymbolicProposer::for_setting(&setting);
    let parents: &[(&str, f64)] =
        &[("def heuristic(others_bids): return 0.5 * min(others_bids)", 0.5)];
    let a = proposer.propose(&request(parents, Some(4), 777)).unwrap();
    let b = proposer.propose(&request(parents, Some(4), 777)).unwrap();
    assert_eq!(a, b);
    let c = proposer.propose(&request(parents, Some(4), 778)).unwrap();
    assert!(a == c || a != c); // different seeds may or may not collide
}

#[test]
fn strategy_four_jitters_the_cavallo_constant() {
    let setting = redistribution_setting();
    let mut proposer = SymbolicProposer::for_setting(&setting);
    let parents: &[(&str, f64)] =
        &[("def heuristic(others_bids): return 0.5 * min(others_bids)", 0.5)];
    let mut jittered = 0;
    for seed in 0..50u64 {
        let source = proposer.propose(&request(parents, Some(4), seed)).unwrap();
        // Jitter outcomes keep the multiplicative form and move the
        // constant by at most 10% either way.
        if let Some(rest) = source.strip_prefix("def heuristic(others_bids): return ") {
            if rest.ends_with("* min(others_bids)") {
                let constant: f64 = rest
                    .split_whitespace()
                    .next()
                    .unwrap()
                    .parse()
                    .expect("leading constant");
                assert!(
                    (0.45..=0.55).contains(&constant),
                    "jittered constant {constant} outside +-10% of 0.5"
                );
                jittered += 1;
            }
        }
    }
    assert!(jittered >= 10, "expected many pure jitters, saw {jittered}");
}

#[test]
fn crossover_combines_material_from_both_parents() {
    let setting = rediscovery_setting();
    let mut proposer = SymbolicProposer::for_setting(&setting);
    let parents: &[(&str, f64)] = &[
        ("def heuristic(v): return v - survival(v)", 0.41),
        ("def heuristic(v): return cdf(v) * 0.9", 0.35),
    ];
    let mut both = 0;
    for seed in 0..100u64 {
        let source = proposer.propose(&request(parents, Some(2), seed)).unwrap();
        parse(&source, HeuristicSignature::per_bidder_score()).unwrap();
        if (source.contains("survival") || source.contains(" - ")) && source.contains("cdf") {
            both += 1;
        }
    }
    assert!(both > 5, "crossover should often mix both parents, saw {both}");
}

#[test]
fn point_mutation_parameterizes_constant_free_parents() {
    let setting = redistribution_setting();
    let mut proposer = SymbolicProposer::for_setting(&setting);
    let parents: &[(&str, f64)] = &[("def heuristic(others_bids): return min(others_bids)", 0.4)];
    let mut wrapped = 0;
    for seed in 0..60u64 {
        let source = proposer.propose(&request(parents, Some(4), seed)).unwrap();
        if source != parents[0].0 {
            wrapped += 1;
        }
    }
    assert!(wrapped > 30, "parameter introduction should usually change the tree: {wrapped}");
}

#[test]
fn shrink_reduces_structural_size() {
    let setting = rediscovery_setting();
    let mut proposer = SymbolicProposer::for_setting(&setting);
    let big = "def heuristic(v): return v - (1 - cdf(v)) / pdf(v) + sigmoid(v * 2) * 0.1";
    let parents: &[(&str, f64)] = &[(big, 0.4)];
    let original = parse(big, HeuristicSignature::per_bidder_score()).unwrap();
    let original_size = crate::dsl::structural_size(&original);
    let mut smaller = 0;
    for seed in 0..40u64 {
        let source = proposer.propose(&request(parents, Some(5), seed)).unwrap();
        let program = parse(&source, HeuristicSignature::per_bidder_score()).unwrap();
        if crate::dsl::structural_size(&program) < original_size {
            smaller += 1;
        }
    }
    assert!(smaller > 25, "deletion should usually shrink the tree: {smaller}");
}

#[test]
fn bindings_are_inlined_before_mutation() {
    let setting = rediscovery_setting();
    let mut proposer = SymbolicProposer::for_setting(&setting);
    let parent = "def heuristic(v):\n  a = v * 2\n  return a - 1";
    let parents: &[(&str, f64)] = &[(parent, 0.4)];
    for seed in 0..20u64 {
        let source = proposer.propose(&request(parents, Some(3), seed)).unwrap();
        let program = parse(&source, HeuristicSignature::per_bidder_score()).unwrap();
        assert!(program.bindings().is_empty(), "mutated output is a single expression");
    }
}

// --- prompt rendering ---------------------------------------------------

#[test]
fn redistribution_prompt_substitutes_counts() {
    let library = PromptLibrary::embedded();
    let req = request(&[("def heuristic(others_bids): return 0", 0.0)], None, 1);
    let (system, user) = render_prompts(&req, &redistribution_setting(), &library).unwrap();
    assert!(system.contains("2 items and 4 bidders"), "{system}");
    assert!(system.contains("array of length 3"), "{system}");
    assert!(user.contains("heuristic_v3"), "{user}");
}

#[test]
fn rendered_system_prompt_is_byte_identical_to_the_template() {
    let library = PromptLibrary::embedded();
    let req = request(&[("def heuristic(others_bids): return 0", 0.0)], None, 1);
    let (system, _) = render_prompts(&req, &redistribution_setting(), &library).unwrap();
    let golden = include_str!("../../../../prompts/redistribution.txt")
        .replace("{n_items}", "2")
        .replace("{n_bidders}", "4")
        .replace("{others_len}", "3");
    assert_eq!(system, golden);
}

#[test]
fn strategy_line_and_parent_order() {
    let library = PromptLibrary::embedded();
    let mut req = request(
        &[
            ("def heuristic(v): return v", 0.9),
            ("def heuristic(v): return cdf(v)", 0.1),
        ],
        Some(1),
        1,
    );
    req.version = 7;
    let (_, user) = render_prompts(&req, &rediscovery_setting(), &library).unwrap();
    assert!(user.contains("totally different form from the given ones"), "{user}");
    assert!(user.contains("heuristic_v7"), "{user}");
    // Worst first, best last.
    let worst = user.find("cdf(v)").unwrap();
    let best = user.find("return v\n").unwrap();
    assert!(worst < best, "parents must be ordered worst to best:\n{user}");
}

#[test]
fn missing_template_is_reported() {
    let mut library = PromptLibrary::embedded();
    // A setting whose template name is absent.
    library = library.with_rediscovery_strategies();
    let req = request(&[("def heuristic(v): return v", 0.0)], None, 1);
    // All shipped settings have templates; simulate a missing one by
    // querying the library directly.
    assert!(library.template("nonexistent").is_err());
    let _ = render_prompts(&req, &rediscovery_setting(), &library).unwrap();
}

// --- completion extraction ----------------------------------------------

#[test]
fn code_fence_extraction_rules() {
    assert_eq!(
        extract_code_block("```\ndef heuristic_v3(v): return v - survival(v) / pdf(v)\n```"),
        "def heuristic_v3(v): return v - survival(v) / pdf(v)"
    );
    assert_eq!(
        extract_code_block("```python\ndef heuristic(v): return v\n```\ntrailing prose"),
        "def heuristic(v): return v"
    );
    // No fence: the whole reply goes to the parser.
    assert_eq!(extract_code_block("  def heuristic(v): return v  "), "def heuristic(v): return v");
    // Code on the fence line is kept.
    assert_eq!(extract_code_block("```def heuristic(v): return v```"), "def heuristic(v): return v");
}

// --- LLM client against a local mock endpoint ---------------------------

fn serve_responses(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
    let addr = listener.local_addr().unwrap();
    let handle = std::thread::spawn(move || {
        for (status, body) in responses {
            let (mut stream, _) = match listener.accept() {
                Ok(pair) => pair,
                Err(_) => return,
            };
            let mut buffer = vec![0u8; 65536];
            let mut read_total = 0;
            // Read until the end of the request body.
            loop {
                match stream.read(&mut buffer[read_total..]) {
                    Ok(0) => break,
                    Ok(n) => {
                        read_total += n;
                        let text = String::from_utf8_lossy(&buffer[..read_total]);
                        if let Some(header_end) = text.find("\r\n\r\n") {
                            let content_length = text
                                .lines()
                                .find(|l| l.to_ascii_lowercase().starts_with("content-length:"))
                                .and_then(|l| l.split(':').nth(1))
                                .and_then(|v| v.trim().parse::<usize>().ok())
                                .unwrap_or(0);
                            if read_total >= header_end + 4 + content_length {
                                break;
                            }
                        }
                    }
                    Err(_) => break,
                }
            }
            let reason = if status == 200 { "OK" } else { "Error" };
            let response = format!(
                "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(response.as_bytes());
        }
    });
    (format!("http://{addr}"), handle)
}

fn chat_body(content: &str, finish_reason: &str) -> String {
    serde_json::json!({
        "choices": [{
            "message": {"role": "assistant", "content": content},
            "finish_reason": finish_reason
        }]
    })
    .to_string()
}

fn endpoint_config(base_url: &str, key_env: &str) -> LlmEndpointConfig {
    std::env::set_var(key_env, "test-key");
    LlmEndpointConfig {
        base_url: base_url.to_string(),
        model: "test-model".to_string(),
        api_key_env: key_env.to_string(),
        temperature: 0.8,
        max_tokens: 512,
        timeout_secs: 5,
        retries: 2,
        backoff_initial_ms: 10,
        backoff_factor: 2.0,
    }
}

#[test]
fn llm_proposer_extracts_the_fenced_completion() {
    let reply = "Here you go:\n```python\ndef heuristic_v3(v): return v - survival(v) / pdf(v)\n```";
    let (base_url, handle) = serve_responses(vec![(200, chat_body(reply, "stop"))]);
    let config = endpoint_config(&base_url, "AMD_TEST_KEY_OK");
    let mut proposer =
        LlmProposer::new(config, rediscovery_setting(), PromptLibrary::embedded()).unwrap();
    let source = proposer
        .propose(&request(&[("def heuristic(v): return v", 0.3)], Some(1), 1))
        .unwrap();
    assert_eq!(source, "def heuristic_v3(v): return v - survival(v) / pdf(v)");
    handle.join().unwrap();
}

#[test]
fn llm_truncated_completion_is_rejected_not_retried() {
    let (base_url, handle) =
        serve_responses(vec![(200, chat_body("def heuristic_v1(v): return v +", "length"))]);
    let config = endpoint_config(&base_url, "AMD_TEST_KEY_TRUNC");
    let mut proposer =
        LlmProposer::new(config, rediscovery_setting(), PromptLibrary::embedded()).unwrap();
    let result = proposer.propose(&request(&[("def heuristic(v): return v", 0.3)], None, 1));
    assert!(matches!(result, Err(ProposeError::Rejected(reason)) if reason.contains("truncated")));
    handle.join().unwrap();
}

#[test]
fn llm_retries_transient_errors_with_backoff() {
    let ok = chat_body("```\ndef heuristic_v1(v): return cdf(v)\n```", "stop");
    let (base_url, handle) = serve_responses(vec![
        (500, "{}".to_string()),
        (429, "{}".to_string()),
        (200, ok),
    ]);
    let config = endpoint_config(&base_url, "AMD_TEST_KEY_RETRY");
    let mut proposer =
        LlmProposer::new(config, rediscovery_setting(), PromptLibrary::embedded()).unwrap();
    let source = proposer
        .propose(&request(&[("def heuristic(v): return v", 0.3)], None, 1))
        .unwrap();
    assert_eq!(source, "def heuristic_v1(v): return cdf(v)");
    handle.join().unwrap();
}

#[test]
fn llm_endpoint_down_becomes_unavailable_after_retries() {
    // Nothing listens on this port after the listener drops.
    let port = {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        listener.local_addr().unwrap().port()
    };
    let mut config =
        endpoint_config(&format!("http://127.0.0.1:{port}"), "AMD_TEST_KEY_DOWN");
    config.retries = 1;
    config.backoff_initial_ms = 1;
    let mut proposer =
        LlmProposer::new(config, rediscovery_setting(), PromptLibrary::embedded()).unwrap();
    let result = proposer.propose(&request(&[("def heuristic(v): return v", 0.3)], None, 1));
    assert!(matches!(result, Err(ProposeError::Unavailable(_))), "{result:?}");
}

#[test]
fn llm_missing_api_key_env_fails_construction() {
    let config = LlmEndpointConfig {
        base_url: "http://127.0.0.1:1".to_string(),
        model: "m".to_string(),
        api_key_env: "AMD_TEST_KEY_DEFINITELY_UNSET".to_string(),
        temperature: 0.8,
        max_tokens: 512,
        timeout_secs: 5,
        retries: 0,
        backoff_initial_ms: 1,
        backoff_factor: 1.0,
    };
    let err = match LlmProposer::new(config, rediscovery_setting(), PromptLibrary::embedded()) {
        Err(err) => err,
        Ok(_) => panic!("construction must fail without the key variable"),
    };
    assert!(err.contains("AMD_TEST_KEY_DEFINITELY_UNSET"), "{err}");
}
