from dataclasses import replace

import streamlit as st

from components.initialization import initialize_app_state
from components.processor import run_evaluation, run_generation
from components.results import display_report
from utils.errors import TrajectorySynthError
from utils.file_handler import load_model, load_sequences, save_uploaded_files, upload_key
from utils.seqmodel import METHODS

# Configure page settings
st.set_page_config(
    page_title="UAV Track Forecasting",
    page_icon="🛩️",
    layout="wide",
    initial_sidebar_state="collapsed"
)

# Initialize app state
config_manager = initialize_app_state()

# Light theme
st.markdown("""
<style>
    .stApp, [data-testid="stAppViewContainer"], [data-testid="stHeader"],
    .main .block-container {
        background-color: white !important;
        color: #262730 !important;
    }

    .main-title {
        text-align: center;
        font-size: 2.5rem;
        font-weight: 700;
        margin-bottom: 0.25rem;
        color: #1a1a1a;
    }

    .subtitle {
        text-align: center;
        color: #666666;
        font-size: 1rem;
        margin-bottom: 2rem;
    }

    .stButton button {
        background-color: rgba(144, 238, 144, 0.2) !important;
        border: 1px solid rgba(144, 238, 144, 0.5) !important;
        color: #2E8B57 !important;
    }

    #MainMenu, footer {
        visibility: hidden;
    }
</style>
""", unsafe_allow_html=True)

st.markdown('<h1 class="main-title">UAV Track Forecasting</h1>', unsafe_allow_html=True)
st.markdown(
    '<p class="subtitle">Generate minimum-snap image tracks and compare forecasting methods by FDE</p>',
    unsafe_allow_html=True,
)

col1, col2 = st.columns([1, 1])

# Synthetic data
with col1:
    st.subheader("Synthetic tracks")
    gen_config = st.session_state.gen_config
    count = st.number_input("Tracks", min_value=1, max_value=5000, value=min(gen_config.count, 100))
    seed = st.number_input("Seed", min_value=0, value=gen_config.seed)
    noise_sigma = st.number_input("Observation noise σ (px)", min_value=0.0, value=gen_config.noise_sigma)
    if st.button("Generate", use_container_width=True):
        config = replace(gen_config, count=int(count), seed=int(seed), noise_sigma=float(noise_sigma))
        run_generation(config)
    if st.session_state.get('summary'):
        st.json(st.session_state.summary, expanded=False)

# Real annotations and model
with col2:
    st.subheader("Annotations and model")
    uploaded_files = st.file_uploader(
        "Annotation files (JSON with exist / gt_rect lists)",
        type=["json"],
        accept_multiple_files=True,
    )
    if uploaded_files and st.button("Load annotations", use_container_width=True):
        try:
            st.session_state.sequences = load_sequences(save_uploaded_files(uploaded_files))
            st.success(f"Loaded {len(st.session_state.sequences)} sequences")
        except TrajectorySynthError as e:
            st.error(f"Error loading annotations: {e}")

    model_file = st.file_uploader("RNN-MDN model (.npz)", type=["npz"])
    model_source = upload_key(model_file)
    if model_source is not None and model_source != st.session_state.model_source:
        try:
            model_dir = save_uploaded_files([model_file], upload_dir="data/models")
            st.session_state.model, _ = load_model(model_dir / model_file.name)
            st.session_state.model_source = model_source
            st.success("Model loaded")
        except TrajectorySynthError as e:
            st.error(f"Error loading model: {e}")

# Evaluation
st.subheader("Evaluation")
methods = st.multiselect(
    "Methods",
    options=list(METHODS),
    default=st.session_state.methods,
)
evaluate_clicked = st.button("Evaluate", use_container_width=True)

if evaluate_clicked:
    st.session_state.methods = methods
    if not st.session_state.sequences:
        st.warning("Generate tracks or load annotations first.")
    else:
        run_evaluation(st.session_state.sequences, methods, st.session_state.model)

display_report(st.session_state.report)
