"""
Modular components of the seamstress translation pipeline

This package contains focused modules for different aspects of the system:
- models: Data structures and enums
- config: Environment, backend profiles and run configuration
- text_processor: C/Rust lexical helpers and condition evaluation
- c_model: Element scanning, include/call graphs, conditional blocks
- preprocess: Include merging, declaration stripping, feature extraction, reordering
- segment: Translation unit planning and cap shrinking
- metadata: Unit metadata, Rust element scanning, mappings and context selection
- prompts: Prompt templates, token estimation and response assembly
- llm_backend: Chat and replay backends
- workspace: Cargo workspace, compilation, error classification and patches
- orchestrator: Translation pipeline, repair loop and coverage
- file_search: Project source discovery
- error_handling: Exception hierarchy and error handling decorators
- common_utils: Shared utility functions
- display_utils: Summary tables
"""

from .models import (
    CodeElement, ConditionalBlock, CoverageReport, ElementKind, ErrorCategory, ModuleSource,
    SegmentPlan, TranslationUnit, UnitStatus,
)
from .config import RunConfig, get_backend_profile, get_environment_info, load_run_config, setup_environment
from .c_model import (
    analyze_project, build_call_graph, build_include_graph, detect_conditional_blocks, pair_decls_defs,
    scan_elements,
)
from .preprocess import (
    extract_cfg_macros, merge_includes, preprocess_project, reorder_elements, strip_declarations,
    uniquify_statics,
)
from .segment import group_sccs, plan_project, plan_segments, shrink_for_overflow, shrink_for_stall
from .metadata import MetadataStore, emit_unit_metadata, parse_rust_elements, record_mapping, select_context
from .prompts import (
    assemble_multipart, build_mapping_prompt, build_repair_prompt, build_translation_prompt, estimate_tokens,
)
from .llm_backend import ChatBackend, ReplayBackend, record_replay
from .workspace import apply_patches, classify_errors, compile_workspace, scaffold_workspace
from .orchestrator import choose_repair_files, compute_coverage, run_pipeline
from .file_search import find_c_sources, summarize_sources
from .error_handling import (
    SeamstressError, ValidationError, retry_operation, safe_file_operation, safe_json_response,
    safe_operation, standardize_error_response,
)
from .common_utils import canonical_json, snake_case
from .display_utils import display_analysis, display_coverage, print_coverage

__all__ = [
    # Models
    'CodeElement', 'ConditionalBlock', 'CoverageReport', 'ElementKind', 'ErrorCategory', 'ModuleSource',
    'SegmentPlan', 'TranslationUnit', 'UnitStatus',
    # Configuration
    'RunConfig', 'get_backend_profile', 'get_environment_info', 'load_run_config', 'setup_environment',
    # C analysis
    'analyze_project', 'build_call_graph', 'build_include_graph', 'detect_conditional_blocks',
    'pair_decls_defs', 'scan_elements',
    # Preprocessing
    'extract_cfg_macros', 'merge_includes', 'preprocess_project', 'reorder_elements', 'strip_declarations',
    'uniquify_statics',
    # Segmentation
    'group_sccs', 'plan_project', 'plan_segments', 'shrink_for_overflow', 'shrink_for_stall',
    # Metadata
    'MetadataStore', 'emit_unit_metadata', 'parse_rust_elements', 'record_mapping', 'select_context',
    # Prompts and backends
    'assemble_multipart', 'build_mapping_prompt', 'build_repair_prompt', 'build_translation_prompt',
    'estimate_tokens', 'ChatBackend', 'ReplayBackend', 'record_replay',
    # Workspace and pipeline
    'apply_patches', 'classify_errors', 'compile_workspace', 'scaffold_workspace',
    'choose_repair_files', 'compute_coverage', 'run_pipeline',
    # File search
    'find_c_sources', 'summarize_sources',
    # Error handling
    'SeamstressError', 'ValidationError', 'retry_operation', 'safe_file_operation', 'safe_json_response',
    'safe_operation', 'standardize_error_response',
    # Common utilities
    'canonical_json', 'snake_case',
    # Display utilities
    'display_analysis', 'display_coverage', 'print_coverage',
]
