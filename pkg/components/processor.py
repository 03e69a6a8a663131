import streamlit as st

from utils.datagen import generate_dataset, summarize
from utils.errors import ConfigError, TrajectorySynthError
from utils.harness import evaluate
from utils.seqmodel import build_predictors


def run_generation(config):
    """
    Generate a synthetic dataset with progress feedback

    Args:
        config: GenConfig

    Returns:
        Dataset, or None if generation failed
    """
    status_container = st.empty()
    progress_bar = st.progress(0)
    status_container.info(f"Generating {config.count} tracks...")

    def progress(done, total):
        progress_bar.progress(done / total, text=f"Accepted {done}/{total} tracks")

    try:
        dataset = generate_dataset(config, progress=progress)
    except TrajectorySynthError as e:
        status_container.error(f"Generation failed: {e}")
        return None

    progress_bar.progress(1.0, text="Generation complete!")
    status_container.success(
        f"Generated {len(dataset.tracks)} tracks from {dataset.attempts} runs "
        f"({dataset.acceptance_rate:.1%} accepted)"
    )
    st.session_state.dataset = dataset
    st.session_state.sequences = dataset.tracks
    st.session_state.summary = summarize(dataset.tracks)
    return dataset


def run_evaluation(sequences, methods, model=None):
    """
    Evaluate the selected methods on the loaded sequences

    Args:
        sequences: Tracks or annotation sequences
        methods: List of method names
        model: MdnModel used when 'mdn' is selected

    Returns:
        EvalReport, or None on failure
    """
    if not methods:
        st.warning("Select at least one method.")
        return None
    try:
        predictors = build_predictors(methods, model)
    except ConfigError as e:
        st.warning(f"{e}. Upload a model file or deselect 'mdn'.")
        return None

    progress_bar = st.progress(0)

    def progress(done, total):
        progress_bar.progress(done / total, text=f"Windowed {done}/{total} sequences")

    try:
        report = evaluate(
            predictors,
            sequences,
            horizons=st.session_state.horizons,
            obs_len=st.session_state.obs_len,
            progress=progress,
        )
    except TrajectorySynthError as e:
        st.error(f"Evaluation failed: {e}")
        return None

    progress_bar.progress(1.0, text="Evaluation complete!")
    st.session_state.report = report
    return report
