import streamlit as st

from utils.config_manager import ConfigManager
from utils.datagen import GenConfig
from utils.errors import ConfigError


def initialize_app_state():
    """Initialize application state and return the configuration manager"""
    try:
        config_manager = ConfigManager()
    except ConfigError as e:
        st.error(f"Error loading configuration: {e}")
        config_manager = ConfigManager(environ={})

    if 'gen_config' not in st.session_state:
        try:
            st.session_state.gen_config = config_manager.build(GenConfig, strict=False)
        except ConfigError as e:
            st.error(str(e))
            st.session_state.gen_config = GenConfig()
    if 'dataset' not in st.session_state:
        st.session_state.dataset = None
    if 'sequences' not in st.session_state:
        st.session_state.sequences = []
    if 'model' not in st.session_state:
        st.session_state.model = None
    if 'model_source' not in st.session_state:
        st.session_state.model_source = None
    if 'report' not in st.session_state:
        st.session_state.report = None
    if 'methods' not in st.session_state:
        st.session_state.methods = ['kalman', 'linear']
    if 'horizons' not in st.session_state:
        st.session_state.horizons = [8, 10, 12]
    if 'obs_len' not in st.session_state:
        st.session_state.obs_len = 8

    # Display names for the report table
    if 'column_mapping' not in st.session_state:
        st.session_state.column_mapping = {
            'split': 'Split',
            'method': 'Method',
            'horizon': 'Horizon (frames)',
            'fde_mean_px': 'FDE (px)',
            'fde_std_px': 'σ FDE (px)',
            'windows': 'Windows',
        }

    return config_manager
